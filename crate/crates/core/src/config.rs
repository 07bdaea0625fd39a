//! Layered run configuration: defaults, then documents, then `key=value` overrides.
//!
//! Documents are TOML, or JSON when the file extension is `.json`. A run
//! document may hold a `[config]` table, a `[[scenario]]` list and a
//! `[right_turn]` batch description.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::sim::{Scenario, SimConfig, TargetSpec};

/// Reads a TOML or JSON document into a table.
pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str::<serde_json::Value>(&text)
            .map_err(|e| e.to_string())
            .and_then(|mut v| {
                strip_nulls(&mut v);
                serde_json::from_value::<Table>(v).map_err(|e| e.to_string())
            })
    } else {
        toml::from_str::<Table>(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// TOML has no null; a JSON null means the field is absent.
fn strip_nulls(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.retain(|_, x| !x.is_null());
            m.values_mut().for_each(strip_nulls);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_nulls),
        _ => {}
    }
}

/// Recursively merges `over` into `base`; tables merge, everything else replaces.
pub fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Parses `dotted.key=value`. The value is a TOML literal, or a bare string
/// when it does not parse as one.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override {s:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Usage(format!(
            "override {s:?} has an empty key segment"
        )));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Builds a nested table holding `value` at the dotted `key`.
pub fn dotted_table(key: &str, value: Value) -> Table {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap_or_default();
    let mut t = Table::new();
    t.insert(last.to_string(), value);
    for p in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(t));
        t = outer;
    }
    t
}

/// Collects dotted leaf keys; arrays count as leaves.
pub fn leaf_keys(table: &Table) -> BTreeSet<String> {
    fn walk(prefix: &str, t: &Table, out: &mut BTreeSet<String>) {
        for (k, v) in t {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                Value::Table(inner) => walk(&key, inner, out),
                _ => {
                    out.insert(key);
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    walk("", table, &mut out);
    out
}

fn to_table<T: Serialize>(value: &T) -> Result<Table> {
    Table::try_from(value).map_err(|e| Error::Config(e.to_string()))
}

/// Applies `layers` on top of `base` after checking every key against the
/// keys `base` serializes to.
pub fn layered<T: Serialize + DeserializeOwned>(base: &T, layers: &[Table]) -> Result<T> {
    let mut merged = to_table(base)?;
    let valid = leaf_keys(&merged);
    for layer in layers {
        let unknown: Vec<String> = leaf_keys(layer)
            .into_iter()
            .filter(|k| !valid.contains(k))
            .collect();
        if !unknown.is_empty() {
            let list: Vec<&str> = valid.iter().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "unknown config key(s) {}; valid keys: {}",
                unknown.join(", "),
                list.join(", ")
            )));
        }
        merge(&mut merged, layer);
    }
    Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

impl SimConfig {
    /// This configuration with `layers` applied in order, validated.
    pub fn with_layers(&self, layers: &[Table]) -> Result<Self> {
        let cfg: SimConfig = layered(self, layers)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every dotted key accepted in a `[config]` table or `--set` override.
    pub fn valid_keys() -> Vec<String> {
        to_table(&SimConfig::default())
            .map(|t| leaf_keys(&t).into_iter().collect())
            .unwrap_or_default()
    }
}

/// A batch of right-turn scenarios with consecutive seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RightTurnBatch {
    pub count: usize,
    #[serde(default)]
    pub first_seed: Option<u64>,
}

/// Contents of a scenario document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDocument {
    #[serde(default)]
    pub config: Table,
    #[serde(default)]
    pub scenario: Vec<Scenario>,
    #[serde(default)]
    pub right_turn: Option<RightTurnBatch>,
}

impl RunDocument {
    /// Reads a document; relative replay file paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let table = read_table(path)?;
        let mut doc: RunDocument =
            Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| {
                    Error::Config(format!("{}: {}", path.display(), e.message()))
                })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for s in &mut doc.scenario {
            if let Some(TargetSpec::Replay { file, .. }) = &mut s.target {
                if file.is_relative() {
                    *file = base.join(&*file);
                }
            }
        }
        Ok(doc)
    }

    /// Listed scenarios followed by the right-turn batch. `seed` supplies the
    /// batch's first seed when the document leaves it out.
    pub fn scenarios(&self, seed: Option<u64>) -> Result<Vec<Scenario>> {
        let mut out = self.scenario.clone();
        if let Some(b) = self.right_turn {
            let first = b.first_seed.or(seed).ok_or_else(|| {
                Error::Usage("right_turn batch needs first_seed in the document or --seed".into())
            })?;
            out.extend((0..b.count as u64).map(|i| Scenario::right_turn(first + i)));
        }
        Ok(out)
    }
}

/// Resolves the effective configuration: defaults, the document's `[config]`,
/// an optional config file, then `key=value` overrides.
pub fn resolve_config(
    document: Option<&Table>,
    config_file: Option<&PathBuf>,
    overrides: &[String],
) -> Result<SimConfig> {
    let mut layers = Vec::new();
    if let Some(t) = document {
        layers.push(t.clone());
    }
    if let Some(p) = config_file {
        let mut t = read_table(p)?;
        // A full run document may be given as the config file.
        if let Some(Value::Table(inner)) = t.remove("config") {
            if t.keys().all(|k| k == "scenario" || k == "right_turn") {
                t = inner;
            } else {
                t.insert("config".into(), Value::Table(inner));
            }
        } else {
            t.remove("scenario");
            t.remove("right_turn");
        }
        layers.push(t);
    }
    for o in overrides {
        let (k, v) = parse_assignment(o)?;
        layers.push(dotted_table(&k, v));
    }
    SimConfig::default().with_layers(&layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_values_parse_as_toml_literals() {
        assert_eq!(
            parse_assignment("omega=0.25").unwrap().1,
            Value::Float(0.25)
        );
        assert_eq!(
            parse_assignment("mpc.horizon = 30").unwrap().1,
            Value::Integer(30)
        );
        assert_eq!(
            parse_assignment("a.b=hello").unwrap().1,
            Value::String("hello".into())
        );
        assert!(parse_assignment("novalue").is_err());
        assert!(parse_assignment("a..b=1").is_err());
    }

    #[test]
    fn overrides_win_over_documents() {
        let mut doc = Table::new();
        doc.insert("omega".into(), Value::Float(0.1));
        let cfg = resolve_config(
            Some(&doc),
            None,
            &["omega=0.2".into(), "mpc.horizon=30".into()],
        )
        .unwrap();
        assert_eq!(cfg.omega, 0.2);
        assert_eq!(cfg.mpc.horizon, 30);
        let cfg = resolve_config(Some(&doc), None, &[]).unwrap();
        assert_eq!(cfg.omega, 0.1);
    }

    #[test]
    fn integer_literals_fill_float_fields() {
        let cfg = resolve_config(None, None, &["mpc.v_max=20".into()]).unwrap();
        assert_eq!(cfg.mpc.v_max, 20.0);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = resolve_config(None, None, &["mpc.horizn=3".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("mpc.horizn"), "{err}");
        assert!(
            err.contains("mpc.horizon") && err.contains("omega"),
            "{err}"
        );
    }

    #[test]
    fn invalid_values_are_rejected_after_merging() {
        assert!(resolve_config(None, None, &["omega=2.0".into()]).is_err());
        assert!(resolve_config(None, None, &["mpc.horizon=\"long\"".into()]).is_err());
    }

    #[test]
    fn run_document_expands_right_turn_batch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "[config]\nomega = 0.05\n\n[right_turn]\ncount = 3\n").unwrap();
        let doc = RunDocument::load(&p).unwrap();
        assert!(doc.scenarios(None).is_err());
        let s = doc.scenarios(Some(10)).unwrap();
        assert_eq!(
            s.iter().map(|s| s.seed).collect::<Vec<_>>(),
            vec![10, 11, 12]
        );
        assert_eq!(
            resolve_config(Some(&doc.config), None, &[]).unwrap().omega,
            0.05
        );
    }

    #[test]
    fn json_and_toml_scenarios_agree() {
        let s = Scenario::right_turn(4);
        let doc = RunDocument {
            scenario: vec![s.clone()],
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let pj = dir.path().join("run.json");
        let pt = dir.path().join("run.toml");
        fs::write(&pj, serde_json::to_string(&doc).unwrap()).unwrap();
        fs::write(&pt, toml::to_string(&doc).unwrap()).unwrap();
        assert_eq!(RunDocument::load(&pj).unwrap().scenario, vec![s.clone()]);
        assert_eq!(RunDocument::load(&pt).unwrap().scenario, vec![s]);
    }
}
