//! Closed-loop simulation of the ego vehicle against one replayed target.

mod batch;
mod log;
mod plots;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    init_belief, safety_certificate, update_belief, ClassifierConfig, ObservationWindow,
};
use crate::driver::{
    ConfidenceConfig, Intention, ModelSet, PositionDistribution, TimedPosition, Trajectory,
};
use crate::error::{Error, Result};
use crate::mpc::{
    discretize, Controller, EgoInput, EgoState, MpcConfig, OcpProblem, PathReference, PathSpec,
};
use crate::synth::{generate, GeneratorParams, IntersectionGeometry};

pub use batch::{run_batch, BatchReport};
pub use log::{LogRow, PredictionSnapshot, ScenarioLog, ScenarioSummary, Termination};
pub use plots::{emit_plots, PLOT_NAMES};

/// Settings shared by every scenario of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mpc: MpcConfig,
    pub classifier: ClassifierConfig,
    /// Chebyshev violation level ω.
    pub omega: f64,
    pub max_steps: usize,
    /// Consecutive fallback steps tolerated before a run counts as degraded.
    pub fallback_streak_limit: usize,
    /// Predicted distance traces are stored every this many steps.
    pub prediction_log_interval: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mpc: MpcConfig::default(),
            classifier: ClassifierConfig::default(),
            omega: 0.01,
            max_steps: 1000,
            fallback_streak_limit: 50,
            prediction_log_interval: 20,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.mpc.validate()?;
        self.classifier.validate()?;
        ConfidenceConfig::new(self.omega).map_err(|e| Error::Config(e.to_string()))?;
        if self.max_steps == 0 || self.prediction_log_interval == 0 {
            return Err(Error::Config(
                "max_steps and prediction_log_interval must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn confidence(&self) -> Result<ConfidenceConfig> {
        ConfidenceConfig::new(self.omega)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSetup {
    pub initial: EgoState,
    pub path: PathSpec,
}

/// Source of the target vehicle's positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Synthetic vehicle drawn with the scenario seed.
    Generated {
        intention: Intention,
        #[serde(default)]
        index: u64,
        #[serde(default)]
        generator: GeneratorParams,
        /// Time from scenario start to the onset of the turn; the trajectory is cropped to match.
        #[serde(default)]
        onset_time: Option<f64>,
    },
    /// Recorded positions from a `t,px,py` CSV file.
    Replay {
        intention: Intention,
        file: PathBuf,
        #[serde(default)]
        start_index: usize,
    },
}

impl TargetSpec {
    pub fn intention(&self) -> Intention {
        match self {
            Self::Generated { intention, .. } | Self::Replay { intention, .. } => *intention,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub ego: EgoSetup,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    /// Overrides layered over the run configuration for this scenario only.
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub config: toml::Table,
}

const EGO_START_Y: f64 = -40.0;
const EGO_EXIT_Y: f64 = 20.0;
const EGO_SPEED: f64 = 10.0;
const ONSET_RANGE: (f64, f64) = (3.2, 4.2);

fn default_ego(geometry: &IntersectionGeometry) -> EgoSetup {
    let knots = geometry.ego_path_knots(EGO_START_Y, EGO_EXIT_Y, 5.0);
    EgoSetup {
        initial: EgoState {
            px: geometry.ego_lane_x(),
            py: EGO_START_Y,
            v: EGO_SPEED,
            psi: std::f64::consts::FRAC_PI_2,
            delta: 0.0,
            vs: EGO_SPEED,
            s: 0.0,
        },
        path: PathSpec {
            knots,
            speed_profile: vec![[0.0, EGO_SPEED]],
        },
    }
}

impl Scenario {
    /// Ego heading north from the south arm while a synthetic target from the
    /// east arm turns right into the ego lane. The turn onset time is drawn
    /// from the seed.
    pub fn right_turn(seed: u64) -> Self {
        let generator = GeneratorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let onset = rng.random_range(ONSET_RANGE.0..ONSET_RANGE.1);
        Self {
            name: format!("right_turn_{seed}"),
            seed,
            ego: default_ego(&generator.geometry),
            target: Some(TargetSpec::Generated {
                intention: Intention::TurnRight,
                index: 0,
                generator,
                onset_time: Some(onset),
            }),
            config: toml::Table::new(),
        }
    }

    /// The same ego setup with no other vehicle.
    pub fn empty_intersection(seed: u64) -> Self {
        Self {
            name: format!("empty_{seed}"),
            seed,
            ego: default_ego(&IntersectionGeometry::default()),
            target: None,
            config: toml::Table::new(),
        }
    }

    pub fn true_intention(&self) -> Option<Intention> {
        self.target.as_ref().map(TargetSpec::intention)
    }
}

/// Target positions aligned with simulation steps.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ResolvedTarget {
    pub intention: Intention,
    pub observed: Vec<[f64; 2]>,
    pub truth: Vec<[f64; 2]>,
}

pub(crate) fn resolve_target(spec: &TargetSpec, seed: u64, ts: f64) -> Result<ResolvedTarget> {
    match spec {
        TargetSpec::Generated {
            intention,
            index,
            generator,
            onset_time,
        } => {
            if (generator.sampling_time - ts).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "target sampling time {} differs from controller sampling time {ts}",
                    generator.sampling_time
                )));
            }
            let g = generate(*intention, *index, seed, generator)?;
            let start = match (onset_time, g.turn_interval) {
                (Some(t), Some((a, _))) => {
                    if !(*t >= 0.0 && t.is_finite()) {
                        return Err(Error::Config(format!("onset_time must be >= 0, got {t}")));
                    }
                    let onset = g.index_at_arc_length(a).unwrap_or(0);
                    onset.saturating_sub((t / ts).round() as usize)
                }
                _ => 0,
            };
            Ok(ResolvedTarget {
                intention: *intention,
                observed: g.trajectory.positions()[start..].to_vec(),
                truth: g.truth[start..].to_vec(),
            })
        }
        TargetSpec::Replay {
            intention,
            file,
            start_index,
        } => {
            let traj = Trajectory::read_csv(file)?;
            traj.check_uniform(ts)?;
            if *start_index >= traj.len() {
                return Err(Error::Data(format!(
                    "{}: start_index {start_index} beyond {} samples",
                    file.display(),
                    traj.len()
                )));
            }
            let pos = traj.positions()[*start_index..].to_vec();
            Ok(ResolvedTarget {
                intention: *intention,
                observed: pos.clone(),
                truth: pos,
            })
        }
    }
}

fn plant_step(x: &EgoState, u: &EgoInput, cfg: &MpcConfig) -> Result<EgoState> {
    let mut next = discretize(x, u, cfg.sampling_time, cfg.wheelbase)?;
    next.v = next.v.max(0.0);
    next.vs = next.vs.max(0.0);
    next.delta = next.delta.clamp(-cfg.delta_max, cfg.delta_max);
    next.s = next.s.max(0.0);
    Ok(next)
}

/// Runs one scenario to the path exit, the step cap, the end of the target
/// data or a degraded fallback streak.
pub fn run_scenario(
    scenario: &Scenario,
    config: &SimConfig,
    models: &ModelSet,
) -> Result<ScenarioLog> {
    let effective;
    let config = if scenario.config.is_empty() {
        config.validate()?;
        config
    } else {
        effective = config.with_layers(std::slice::from_ref(&scenario.config))?;
        &effective
    };
    let cfg = &config.mpc;
    let ts = cfg.sampling_time;
    let path = PathReference::try_from(scenario.ego.path.clone())?;
    let confidence = config.confidence()?;
    let target = scenario
        .target
        .as_ref()
        .map(|t| resolve_target(t, scenario.seed, ts))
        .transpose()?;
    let geometry = match &scenario.target {
        Some(TargetSpec::Generated { generator, .. }) => generator.geometry,
        _ => IntersectionGeometry::default(),
    };

    let mut controller = Controller::new(cfg.clone(), path.clone(), confidence)?;
    let mut belief = init_belief(config.classifier.epsilon)?;
    let mut window = ObservationWindow::new(config.classifier.window)?;
    let mut ego = scenario.ego.initial;
    let mut rows = Vec::new();
    let mut predictions = Vec::new();
    let mut streak = 0usize;
    let mut termination = Termination::StepCap;

    for k in 0..config.max_steps {
        if ego.s >= path.length() {
            termination = Termination::Exited;
            break;
        }
        let t = k as f64 * ts;
        let (outcome, target_now) = match &target {
            Some(tg) => {
                if k >= tg.observed.len() {
                    termination = Termination::TargetExhausted;
                    break;
                }
                let obs = tg.observed[k];
                window.push(TimedPosition {
                    t,
                    px: obs[0],
                    py: obs[1],
                })?;
                belief = update_belief(&belief, &window, models, config.classifier.lambda);
                let out = controller.receding_horizon_step(
                    &ego,
                    &belief,
                    models,
                    &PositionDistribution::point(obs),
                )?;
                (out, Some((obs, tg.truth[k])))
            }
            None => {
                let problem = OcpProblem::new(ego, path.clone(), cfg.clone(), vec![])?;
                (controller.step_problem(problem)?, None)
            }
        };

        let certificate = target_now.map(|_| safety_certificate(&belief, config.omega));
        if k % config.prediction_log_interval == 0 {
            predictions.extend(PredictionSnapshot::from_outcome(k, &outcome));
        }
        rows.push(LogRow::new(
            k,
            t,
            &ego,
            &outcome,
            target_now,
            &belief,
            certificate,
            &path,
            cfg,
        ));

        if outcome.diagnostics.fallback {
            streak += 1;
        } else {
            streak = 0;
        }
        if streak > config.fallback_streak_limit {
            termination = Termination::Degraded;
            break;
        }
        ego = plant_step(&ego, &outcome.input, cfg)?;
    }

    let summary = ScenarioSummary::from_rows(
        scenario,
        &rows,
        termination,
        config,
        &geometry,
        target.as_ref().map(|t| t.intention),
    );
    Ok(ScenarioLog {
        name: scenario.name.clone(),
        seed: scenario.seed,
        intention: scenario.true_intention(),
        rows,
        predictions,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_turn_is_seeded_and_crops_to_the_onset() {
        let a = Scenario::right_turn(5);
        assert_eq!(a, Scenario::right_turn(5));
        assert_ne!(a, Scenario::right_turn(6));
        let Some(TargetSpec::Generated { onset_time, .. }) = &a.target else {
            panic!()
        };
        let onset = onset_time.unwrap();
        assert!((ONSET_RANGE.0..ONSET_RANGE.1).contains(&onset));
        let r = resolve_target(a.target.as_ref().unwrap(), a.seed, 0.04).unwrap();
        assert_eq!(r.observed.len(), r.truth.len());
        // The target starts on the approach, east of the intersection.
        assert!(r.truth[0][0] > 3.5);
    }

    #[test]
    fn scenario_specs_roundtrip_through_toml() {
        let s = Scenario::right_turn(3);
        let text = toml::to_string(&s).unwrap();
        let back: Scenario = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(toml::from_str::<Scenario>(&format!("extra = 1\n{text}")).is_err());
    }

    #[test]
    fn sim_config_rejects_bad_values() {
        let c = SimConfig {
            omega: 1.5,
            ..SimConfig::default()
        };
        assert!(c.validate().is_err());
        SimConfig::default().validate().unwrap();
    }
}
