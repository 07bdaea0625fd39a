//! Human-driver models: one pair of velocity-field GPs per intention.
//!
//! Positions are propagated with forward Euler through the GP velocity
//! fields, carrying a Gaussian position belief whose covariance grows by
//! `Ts² · diag(σ_vx², σ_vy²)` per step. Chebyshev's inequality turns the
//! per-axis standard deviations into distribution-free confidence tubes.

mod archive;
mod build;
mod trajectory;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::TrainedGP;

pub use archive::{load_model, save_model, ModelMetadata, MODEL_FORMAT_VERSION};
pub use build::{build_model, prototype_path, BuildConfig, PROTOTYPE_POINTS};
pub use trajectory::{
    estimate_velocities, TimedPosition, Trajectory, VelocitySample, SAMPLING_TOLERANCE,
};
pub use validate::{
    validate_confidence, validate_with_nu, ConfidenceReport, HORIZON_CONTAINMENT_FRACTION,
};

/// Driving intention of a target vehicle at the intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intention {
    TurnRight,
    TurnLeft,
    StraightOn,
}

impl Intention {
    pub const ALL: [Intention; 3] = [
        Intention::TurnRight,
        Intention::TurnLeft,
        Intention::StraightOn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intention::TurnRight => "turn_right",
            Intention::TurnLeft => "turn_left",
            Intention::StraightOn => "straight_on",
        }
    }

    /// Short label used in log column names.
    pub fn short(self) -> &'static str {
        match self {
            Intention::TurnRight => "right",
            Intention::TurnLeft => "left",
            Intention::StraightOn => "straight",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Intention::TurnRight => 0,
            Intention::TurnLeft => 1,
            Intention::StraightOn => 2,
        }
    }
}

impl fmt::Display for Intention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "turn_right" | "right" => Ok(Intention::TurnRight),
            "turn_left" | "left" => Ok(Intention::TurnLeft),
            "straight_on" | "straight" => Ok(Intention::StraightOn),
            other => Err(Error::Usage(format!(
                "unknown intention '{other}' (expected turn_right, turn_left or straight_on)"
            ))),
        }
    }
}

/// Gaussian belief over a 2-D position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionDistribution {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
}

impl PositionDistribution {
    pub fn new(mean: [f64; 2], covariance: [[f64; 2]; 2]) -> Result<Self> {
        if mean
            .iter()
            .chain(covariance.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Usage("position distribution must be finite".into()));
        }
        if (covariance[0][1] - covariance[1][0]).abs() > 1e-12 {
            return Err(Error::Usage("position covariance must be symmetric".into()));
        }
        let tr = covariance[0][0] + covariance[1][1];
        let det = covariance[0][0] * covariance[1][1] - covariance[0][1] * covariance[1][0];
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        if 0.5 * tr - disc < -1e-12 {
            return Err(Error::Usage(
                "position covariance must be positive semidefinite".into(),
            ));
        }
        Ok(Self { mean, covariance })
    }

    /// A known position.
    pub fn point(mean: [f64; 2]) -> Self {
        Self {
            mean,
            covariance: [[0.0; 2]; 2],
        }
    }

    pub fn std_devs(&self) -> [f64; 2] {
        [
            self.covariance[0][0].max(0.0).sqrt(),
            self.covariance[1][1].max(0.0).sqrt(),
        ]
    }
}

/// Predicted position distributions for steps `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPrediction {
    pub steps: Vec<PositionDistribution>,
    /// Per-axis standard deviations, one entry per step.
    pub sigmas: Vec<[f64; 2]>,
    /// Predicted mean velocities used for each Euler step (length `N`).
    pub velocities: Vec<[f64; 2]>,
}

impl RolloutPrediction {
    pub fn horizon(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn means(&self) -> Vec<[f64; 2]> {
        self.steps.iter().map(|s| s.mean).collect()
    }
}

/// Chebyshev confidence level: violation probability `omega`, multiplier `nu = sqrt(1/omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfidenceRepr", into = "ConfidenceRepr")]
pub struct ConfidenceConfig {
    omega: f64,
}

#[derive(Serialize, Deserialize)]
struct ConfidenceRepr {
    omega: f64,
}

impl TryFrom<ConfidenceRepr> for ConfidenceConfig {
    type Error = Error;
    fn try_from(r: ConfidenceRepr) -> Result<Self> {
        ConfidenceConfig::new(r.omega)
    }
}

impl From<ConfidenceConfig> for ConfidenceRepr {
    fn from(c: ConfidenceConfig) -> Self {
        ConfidenceRepr { omega: c.omega }
    }
}

impl ConfidenceConfig {
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega < 1.0) {
            return Err(Error::Usage(format!(
                "omega must lie in (0, 1), got {omega}"
            )));
        }
        Ok(Self { omega })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn nu(&self) -> f64 {
        (1.0 / self.omega).sqrt()
    }
}

/// Axis-aligned interval `center ± half_width` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisInterval {
    pub center: [f64; 2],
    pub half_width: [f64; 2],
}

impl AxisInterval {
    pub fn lower(&self) -> [f64; 2] {
        [
            self.center[0] - self.half_width[0],
            self.center[1] - self.half_width[1],
        ]
    }

    pub fn upper(&self) -> [f64; 2] {
        [
            self.center[0] + self.half_width[0],
            self.center[1] + self.half_width[1],
        ]
    }

    pub fn contains_axis(&self, p: [f64; 2], axis: usize) -> bool {
        (p[axis] - self.center[axis]).abs() <= self.half_width[axis]
    }
}

/// Velocity-field model for one intention.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentionModel {
    pub intention: Intention,
    pub gp_vx: TrainedGP,
    pub gp_vy: TrainedGP,
    pub sampling_time: f64,
    pub prototype_path: Vec<[f64; 2]>,
}

impl IntentionModel {
    pub fn new(
        intention: Intention,
        gp_vx: TrainedGP,
        gp_vy: TrainedGP,
        sampling_time: f64,
        prototype_path: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if gp_vx.dim() != 2 || gp_vy.dim() != 2 {
            return Err(Error::Usage(
                "velocity GPs must take 2-D position inputs".into(),
            ));
        }
        if !(sampling_time > 0.0 && sampling_time.is_finite()) {
            return Err(Error::Usage(format!(
                "sampling time must be positive, got {sampling_time}"
            )));
        }
        if prototype_path.len() < 2 {
            return Err(Error::Usage(
                "prototype path needs at least 2 points".into(),
            ));
        }
        if prototype_path.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Usage("prototype path must be finite".into()));
        }
        Ok(Self {
            intention,
            gp_vx,
            gp_vy,
            sampling_time,
            prototype_path,
        })
    }

    /// Multi-step position prediction from `start` over `steps` Euler steps.
    ///
    /// Cross-covariance between position and velocity is neglected, so a
    /// diagonal start covariance stays diagonal.
    pub fn rollout(&self, start: &PositionDistribution, steps: usize) -> RolloutPrediction {
        let ts = self.sampling_time;
        let mut out = Vec::with_capacity(steps + 1);
        let mut velocities = Vec::with_capacity(steps);
        let mut current = *start;
        out.push(current);
        for _ in 0..steps {
            let vx = self
                .gp_vx
                .predict_uncertain_2d(current.mean, current.covariance);
            let vy = self
                .gp_vy
                .predict_uncertain_2d(current.mean, current.covariance);
            current.mean = [
                current.mean[0] + ts * vx.mean,
                current.mean[1] + ts * vy.mean,
            ];
            current.covariance[0][0] += ts * ts * vx.variance;
            current.covariance[1][1] += ts * ts * vy.variance;
            velocities.push([vx.mean, vy.mean]);
            out.push(current);
        }
        let sigmas = out.iter().map(PositionDistribution::std_devs).collect();
        RolloutPrediction {
            steps: out,
            sigmas,
            velocities,
        }
    }
}

/// One model per intention.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    models: [IntentionModel; 3],
}

impl ModelSet {
    /// Accepts the three models in any order; each intention must appear once.
    pub fn new(models: Vec<IntentionModel>) -> Result<Self> {
        if models.len() != 3 {
            return Err(Error::Usage(format!(
                "expected 3 intention models, got {}",
                models.len()
            )));
        }
        let mut slots: [Option<IntentionModel>; 3] = [None, None, None];
        for m in models {
            let i = m.intention.index();
            if slots[i].is_some() {
                return Err(Error::Usage(format!("duplicate model for {}", m.intention)));
            }
            slots[i] = Some(m);
        }
        let [a, b, c] = slots;
        let models = [a.unwrap(), b.unwrap(), c.unwrap()];
        let ts = models[0].sampling_time;
        if models.iter().any(|m| m.sampling_time != ts) {
            return Err(Error::Usage(
                "intention models disagree on the sampling time".into(),
            ));
        }
        Ok(Self { models })
    }

    pub fn get(&self, intention: Intention) -> &IntentionModel {
        &self.models[intention.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &IntentionModel> {
        self.models.iter()
    }

    pub fn sampling_time(&self) -> f64 {
        self.models[0].sampling_time
    }
}

/// Free-function form of [`IntentionModel::rollout`].
pub fn rollout(
    model: &IntentionModel,
    start: &PositionDistribution,
    steps: usize,
) -> Result<RolloutPrediction> {
    if steps == 0 {
        return Err(Error::Usage("rollout horizon must be at least 1".into()));
    }
    Ok(model.rollout(start, steps))
}

/// Per-step Chebyshev intervals `mean ± nu · sigma`.
pub fn confidence_tube(pred: &RolloutPrediction, conf: &ConfidenceConfig) -> Vec<AxisInterval> {
    tube_with_nu(pred, conf.nu())
}

pub(crate) fn tube_with_nu(pred: &RolloutPrediction, nu: f64) -> Vec<AxisInterval> {
    pred.steps
        .iter()
        .zip(&pred.sigmas)
        .map(|(s, sig)| AxisInterval {
            center: s.mean,
            half_width: [nu * sig[0], nu * sig[1]],
        })
        .collect()
}
