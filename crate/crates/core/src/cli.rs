//! Command-line pipeline: generate, train, validate, simulate and batch.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{layered, read_table, resolve_config, RunDocument};
use crate::driver::{
    build_model, load_model, save_model, validate_with_nu, BuildConfig, ConfidenceConfig,
    ConfidenceReport, Intention, ModelMetadata, ModelSet, Trajectory,
};
use crate::error::{Error, Result};
use crate::sim::{emit_plots, run_batch, run_scenario, Scenario};
use crate::synth::{generate_set, GeneratorParams};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "gpmpc",
    version,
    about = "GP-supported multi-mode MPC for intersection crossing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic trajectories as `<intention>/<intention>_<index>.csv` plus a manifest.
    Generate(GenerateArgs),
    /// Train one model archive per intention from a generated data directory.
    Train(TrainArgs),
    /// Tube coverage of trained models on held-out trajectories over a horizon range.
    Validate(ValidateArgs),
    /// Run one scenario and write its log, summary and plots.
    Simulate(SimulateArgs),
    /// Run every scenario of a document and write a JSON report.
    Batch(BatchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Trajectories per intention.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Intentions to generate; all three when omitted.
    #[arg(long, value_delimiter = ',')]
    pub intentions: Vec<Intention>,
    /// TOML/JSON file overriding generator parameters.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Pairs per GP.
    #[arg(long, default_value_t = 250)]
    pub subset: usize,
    #[arg(long, default_value_t = 2)]
    pub restarts: usize,
    /// Fraction of each intention's trajectories (highest indices) left out of training.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Threads for training restarts.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Horizon lengths, as `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "38..43")]
    pub horizons: String,
    #[arg(long, default_value_t = 0.01)]
    pub omega: f64,
    /// Use every trajectory, including those listed as training files.
    #[arg(long)]
    pub all: bool,
    /// Also write the table as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML/JSON config file, applied after the scenario document's `[config]`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `dotted.key=value` override; may repeat and wins over files.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Scenario document holding exactly one scenario.
    #[arg(long, conflicts_with_all = ["right_turn", "empty"])]
    pub scenario: Option<PathBuf>,
    /// The built-in right-turn scenario.
    #[arg(long)]
    pub right_turn: bool,
    /// The built-in scenario without a target.
    #[arg(long, conflicts_with = "right_turn")]
    pub empty: bool,
    /// Seed of a built-in scenario.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub scenarios: PathBuf,
    /// First seed of a `[right_turn]` batch lacking `first_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scenario threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// Whether the run met its acceptance condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    AcceptanceFailure,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => EXIT_OK,
            Outcome::AcceptanceFailure => EXIT_ACCEPTANCE,
        }
    }
}

pub fn error_exit_code(e: &Error) -> u8 {
    if e.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Batch(a) => cmd_batch(&a),
    }
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Usage(format!(
                "{} exists and is not a directory",
                dir.display()
            )));
        }
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Usage(format!(
                "{} is not empty; pass --force to write into it",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{what} {} is not a directory",
            dir.display()
        )))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    seed: u64,
    count_per_intention: usize,
    generator: &'a GeneratorParams,
    files: Vec<String>,
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<Outcome> {
    let params = match &a.generator {
        Some(p) => layered(&GeneratorParams::default(), &[read_table(p)?])?,
        None => GeneratorParams::default(),
    };
    params.validate()?;
    prepare_out_dir(&a.out, a.force)?;
    let intentions = if a.intentions.is_empty() {
        Intention::ALL.to_vec()
    } else {
        a.intentions.clone()
    };
    let mut files = Vec::new();
    for i in intentions {
        if a.count == 0 {
            continue;
        }
        let dir = a.out.join(i.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, g) in generate_set(i, a.count, a.seed, &params)?
            .iter()
            .enumerate()
        {
            let name = format!("{}/{}_{k}.csv", i.as_str(), i.as_str());
            g.trajectory.write_csv(a.out.join(&name))?;
            files.push(name);
        }
        log::info!("generated {} {i} trajectories", a.count);
    }
    let manifest = Manifest {
        seed: a.seed,
        count_per_intention: a.count,
        generator: &params,
        files,
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;
    Ok(Outcome::Success)
}

/// Trajectory files of one intention, ordered by index.
fn intention_files(data: &Path, i: Intention) -> Result<Vec<(String, PathBuf)>> {
    let dir = data.join(i.as_str());
    if !dir.is_dir() {
        return Err(Error::Data(format!(
            "missing intention directory {} for {i}",
            dir.display()
        )));
    }
    let prefix = format!("{}_", i.as_str());
    let mut files = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(index) = name
            .strip_prefix(&prefix)
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|r| r.parse::<u64>().ok())
        else {
            continue;
        };
        files.push((index, format!("{}/{name}", i.as_str()), path));
    }
    files.sort_by_key(|f| f.0);
    Ok(files.into_iter().map(|(_, n, p)| (n, p)).collect())
}

pub fn cmd_train(a: &TrainArgs) -> Result<Outcome> {
    require_dir(&a.data, "data directory")?;
    if !(0.0..1.0).contains(&a.holdout) {
        return Err(Error::Usage(format!(
            "--holdout must be in [0, 1), got {}",
            a.holdout
        )));
    }
    let listed: Vec<_> = Intention::ALL
        .iter()
        .map(|&i| intention_files(&a.data, i).map(|f| (i, f)))
        .collect::<Result<_>>()?;
    prepare_out_dir(&a.models, a.force)?;
    let mut config = BuildConfig {
        subset_size: a.subset,
        restarts: a.restarts,
        ..BuildConfig::default()
    };
    config.training.jobs = a.jobs;
    for (i, files) in listed {
        let keep = files.len() - (files.len() as f64 * a.holdout).floor() as usize;
        let train = &files[..keep];
        if train.is_empty() {
            return Err(Error::Data(format!("no training trajectories for {i}")));
        }
        let trajectories: Vec<Trajectory> = train
            .iter()
            .map(|(_, p)| Trajectory::read_csv(p))
            .collect::<Result<_>>()?;
        let model = build_model(i, &trajectories, &config, a.seed)?;
        let meta = ModelMetadata::new(
            &model,
            a.subset,
            a.seed,
            train.iter().map(|(n, _)| n.clone()).collect(),
        );
        save_model(&model, &meta, a.models.join(i.as_str()))?;
        log::info!(
            "trained {i} on {} trajectories: lengthscales {:?}",
            train.len(),
            model.gp_vx.params().lengthscales
        );
    }
    Ok(Outcome::Success)
}

/// Loads the three intention archives under `dir`.
pub fn load_model_set(dir: &Path) -> Result<ModelSet> {
    require_dir(dir, "model directory")?;
    let models = Intention::ALL
        .iter()
        .map(|i| load_model(dir.join(i.as_str())).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    ModelSet::new(models)
}

pub fn parse_horizons(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Usage(format!("invalid horizon list {s:?}; use a..b or a,b,c"));
    let v: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if v.is_empty() || v.contains(&0) {
        return Err(bad());
    }
    Ok(v)
}

#[derive(Debug, Serialize)]
struct ValidationTable {
    omega: f64,
    nu: f64,
    intentions: Vec<(Intention, Vec<ConfidenceReport>)>,
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<Outcome> {
    require_dir(&a.data, "data directory")?;
    let horizons = parse_horizons(&a.horizons)?;
    let conf = ConfidenceConfig::new(a.omega)?;
    require_dir(&a.models, "model directory")?;
    let mut table = ValidationTable {
        omega: a.omega,
        nu: conf.nu(),
        intentions: Vec::new(),
    };
    for i in Intention::ALL {
        let dir = a.models.join(i.as_str());
        if !dir.is_dir() {
            continue;
        }
        let (model, meta) = load_model(&dir)?;
        let held: Vec<Trajectory> = intention_files(&a.data, i)?
            .into_iter()
            .filter(|(n, _)| a.all || !meta.training_files.contains(n))
            .map(|(_, p)| Trajectory::read_csv(p))
            .collect::<Result<_>>()?;
        if held.is_empty() {
            return Err(Error::Data(format!("empty hold-out set for {i}")));
        }
        table
            .intentions
            .push((i, validate_with_nu(&model, &held, &horizons, conf.nu())?));
    }
    if table.intentions.is_empty() {
        return Err(Error::Data(format!(
            "no model archives under {}",
            a.models.display()
        )));
    }
    println!("omega = {}, nu = {:.4}", a.omega, conf.nu());
    println!(
        "{:<12} {:>4} {:>6} {:>10} {:>6}",
        "intention", "N", "axis", "confidence", "held"
    );
    for (i, reports) in &table.intentions {
        for r in reports {
            for (axis, value) in [
                ("x", r.per_axis[0]),
                ("y", r.per_axis[1]),
                ("total", r.total),
            ] {
                println!(
                    "{:<12} {:>4} {:>6} {:>10.4} {:>6}",
                    i.as_str(),
                    r.horizon,
                    axis,
                    value,
                    r.trajectory_count - r.skipped
                );
            }
        }
    }
    if let Some(p) = &a.report {
        write_json(p, &table)?;
    }
    Ok(Outcome::Success)
}

fn simulate_scenario(a: &SimulateArgs) -> Result<(Scenario, RunDocument)> {
    if let Some(p) = &a.scenario {
        let doc = RunDocument::load(p)?;
        let mut s = doc.scenarios(a.seed)?;
        if s.len() != 1 {
            return Err(Error::Usage(format!(
                "{} holds {} scenarios; simulate takes exactly one",
                p.display(),
                s.len()
            )));
        }
        return Ok((s.remove(0), doc));
    }
    let seed = a
        .seed
        .ok_or_else(|| Error::Usage("--seed is required for built-in scenarios".into()))?;
    let s = if a.empty {
        Scenario::empty_intersection(seed)
    } else if a.right_turn {
        Scenario::right_turn(seed)
    } else {
        return Err(Error::Usage(
            "give --scenario FILE, --right-turn or --empty".into(),
        ));
    };
    Ok((s, RunDocument::default()))
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Outcome> {
    let (scenario, doc) = simulate_scenario(a)?;
    let config = resolve_config(Some(&doc.config), a.run.config.as_ref(), &a.run.overrides)?;
    let models = load_model_set(&a.run.models)?;
    prepare_out_dir(&a.run.out, a.run.force)?;
    let log = run_scenario(&scenario, &config, &models)?;
    log.save(&a.run.out)?;
    emit_plots(&log, a.run.out.join("plots"))?;
    let s = &log.summary;
    println!(
        "{}: {} steps, {:?}, violations {}, min margin {}, fallback steps {}",
        s.name,
        s.steps,
        s.termination,
        s.violation_steps,
        s.min_margin.map_or("n/a".into(), |m| format!("{m:.3} m")),
        s.fallback_steps
    );
    Ok(if s.passed() {
        Outcome::Success
    } else {
        Outcome::AcceptanceFailure
    })
}

pub fn cmd_batch(a: &BatchArgs) -> Result<Outcome> {
    let doc = RunDocument::load(&a.scenarios)?;
    let scenarios = doc.scenarios(a.seed)?;
    let config = resolve_config(Some(&doc.config), a.run.config.as_ref(), &a.run.overrides)?;
    let models = load_model_set(&a.run.models)?;
    prepare_out_dir(&a.run.out, a.run.force)?;
    let report = run_batch(&scenarios, &config, &models, a.jobs)?;
    write_json(&a.run.out.join("report.json"), &report)?;
    println!(
        "{} scenarios, {} violating steps, {} degraded, fallback rate {:.4}, warm start feasible {:.4}",
        report.scenario_count,
        report.violation_steps,
        report.degraded,
        report.fallback_rate,
        report.warm_start_feasible_rate
    );
    Ok(if report.passed() {
        Outcome::Success
    } else {
        Outcome::AcceptanceFailure
    })
}
