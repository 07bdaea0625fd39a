//! On-disk model archives: one directory per intention.
//!
//! ```text
//! <dir>/gp_vx.json      velocity GP, x component
//! <dir>/gp_vy.json      velocity GP, y component
//! <dir>/prototype.csv   px,py rows of the prototype path
//! <dir>/metadata.json   intention, sampling time, provenance of the fit
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trajectory::csv_error;
use super::{Intention, IntentionModel};
use crate::error::{Error, Result};
use crate::gp::TrainedGP;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "gpmpc-intention-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format: String,
    pub format_version: u32,
    pub intention: Intention,
    pub sampling_time: f64,
    pub subset_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub training_files: Vec<String>,
}

impl ModelMetadata {
    pub fn new(
        model: &IntentionModel,
        subset_size: usize,
        seed: u64,
        training_files: Vec<String>,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            intention: model.intention,
            sampling_time: model.sampling_time,
            subset_size,
            seed,
            training_files,
        }
    }
}

pub fn save_model(
    model: &IntentionModel,
    metadata: &ModelMetadata,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.gp_vx.save(dir.join("gp_vx.json"))?;
    model.gp_vy.save(dir.join("gp_vy.json"))?;

    let proto = dir.join("prototype.csv");
    let mut w = csv::Writer::from_path(&proto).map_err(|e| csv_error(&proto, e))?;
    w.write_record(["px", "py"])
        .map_err(|e| csv_error(&proto, e))?;
    for p in &model.prototype_path {
        w.write_record([p[0].to_string(), p[1].to_string()])
            .map_err(|e| csv_error(&proto, e))?;
    }
    w.flush().map_err(|e| Error::io(&proto, e))?;

    let meta = dir.join("metadata.json");
    fs::write(&meta, serde_json::to_string_pretty(metadata)?).map_err(|e| Error::io(&meta, e))?;
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<(IntentionModel, ModelMetadata)> {
    let dir = dir.as_ref();
    let meta_path = dir.join("metadata.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let metadata: ModelMetadata = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
    if metadata.format != MODEL_FORMAT || metadata.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported model format {} v{}",
            meta_path.display(),
            metadata.format,
            metadata.format_version
        )));
    }
    let gp_vx = TrainedGP::load(dir.join("gp_vx.json"))?;
    let gp_vy = TrainedGP::load(dir.join("gp_vy.json"))?;

    let proto = dir.join("prototype.csv");
    let mut r = csv::Reader::from_path(&proto).map_err(|e| csv_error(&proto, e))?;
    let mut path = Vec::new();
    for row in r.deserialize::<(f64, f64)>() {
        let (x, y) = row.map_err(|e| csv_error(&proto, e))?;
        path.push([x, y]);
    }
    let model = IntentionModel::new(
        metadata.intention,
        gp_vx,
        gp_vy,
        metadata.sampling_time,
        path,
    )
    .map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    Ok((model, metadata))
}
