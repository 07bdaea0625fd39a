//! Problem assembly, solution container and the independent feasibility audit.

use serde::{Deserialize, Serialize};

use super::dynamics::{discretize, EgoInput, EgoState};
use super::path::PathReference;
use super::MpcConfig;
use crate::classifier::IntentionBelief;
use crate::driver::{rollout, ConfidenceConfig, Intention, ModelSet, PositionDistribution};
use crate::error::{Error, Result};

/// Predicted target means and tightening for one intention, steps `0..=N`
/// and optionally beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceConstraintSpec {
    pub intention: Intention,
    pub means: Vec<[f64; 2]>,
    /// `d_σ(j) = ν·‖σ(j)‖₂`.
    pub d_sigma: Vec<f64>,
}

impl DistanceConstraintSpec {
    pub fn new(intention: Intention, means: Vec<[f64; 2]>, d_sigma: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Usage(
                "distance constraint spec needs at least one step".into(),
            ));
        }
        if means.len() != d_sigma.len() {
            return Err(Error::Dimension {
                expected: means.len(),
                got: d_sigma.len(),
            });
        }
        if d_sigma.iter().any(|d| !(*d >= 0.0 && d.is_finite()))
            || means.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::Usage(
                "distance constraint spec must be finite with d_sigma >= 0".into(),
            ));
        }
        Ok(Self {
            intention,
            means,
            d_sigma,
        })
    }

    /// Required distance `d_safe(v) + d_σ(j)` at step `j`.
    pub fn d_ref(&self, j: usize, v: f64, cfg: &MpcConfig) -> f64 {
        cfg.safety_distance(v) + self.d_sigma[j]
    }
}

/// One instance of the multi-mode finite-horizon OCP.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem {
    pub initial: EgoState,
    pub path: PathReference,
    pub config: MpcConfig,
    pub targets: Vec<DistanceConstraintSpec>,
}

impl OcpProblem {
    pub fn new(
        initial: EgoState,
        path: PathReference,
        config: MpcConfig,
        targets: Vec<DistanceConstraintSpec>,
    ) -> Result<Self> {
        config.validate()?;
        check_state(&initial, &config)?;
        for t in &targets {
            if t.means.len() < config.horizon + 1 {
                return Err(Error::Dimension {
                    expected: config.horizon + 1,
                    got: t.means.len(),
                });
            }
        }
        Ok(Self {
            initial,
            path,
            config,
            targets,
        })
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// One constraint per considered intention and predicted step `1..=N`.
    pub fn distance_constraint_count(&self) -> usize {
        self.targets.len() * self.horizon()
    }

    /// Inputs that hold the current speed and steering and let the path parameter coast.
    pub fn default_inputs(&self) -> Vec<EgoInput> {
        vec![EgoInput::default(); self.horizon()]
    }

    /// Predicted states `0..=N` under `inputs`.
    pub fn simulate(&self, inputs: &[EgoInput]) -> Result<Vec<EgoState>> {
        let cfg = &self.config;
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(self.initial);
        for u in inputs {
            let next = discretize(states.last().unwrap(), u, cfg.sampling_time, cfg.wheelbase)?;
            states.push(next);
        }
        Ok(states)
    }

    /// Stage costs over `0..N` plus the `N`-weighted terminal cost.
    pub fn objective(&self, states: &[EgoState], inputs: &[EgoInput]) -> f64 {
        let cfg = &self.config;
        let n = inputs.len();
        let mut total = 0.0;
        for (j, x) in states.iter().enumerate() {
            let w = if j == n { n as f64 } else { 1.0 };
            let p = self.path.position(x.s);
            let (vr, _) = self.path.v_ref(x.s);
            total += w
                * (cfg.q_position[0] * (x.px - p[0]).powi(2)
                    + cfg.q_position[1] * (x.py - p[1]).powi(2)
                    + cfg.q_speed * (x.v - vr).powi(2));
        }
        for u in inputs {
            let a = u.to_array();
            total += (0..3).map(|k| cfg.r_input[k] * a[k] * a[k]).sum::<f64>();
        }
        total
    }
}

fn check_state(x: &EgoState, cfg: &MpcConfig) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Usage("ego state must be finite".into()));
    }
    if x.s < 0.0 {
        return Err(Error::Usage(format!(
            "path parameter must be >= 0, got {}",
            x.s
        )));
    }
    if x.delta.abs() > cfg.delta_max + 1e-9 {
        return Err(Error::Usage(format!(
            "steering angle {} exceeds delta_max {}",
            x.delta, cfg.delta_max
        )));
    }
    Ok(())
}

/// Builds the OCP for the current belief. Every intention in the likely set
/// contributes a rollout from the observed target position.
pub fn assemble_ocp(
    state: &EgoState,
    belief: &IntentionBelief,
    models: &ModelSet,
    path: &PathReference,
    conf: &ConfidenceConfig,
    cfg: &MpcConfig,
    target: &PositionDistribution,
) -> Result<OcpProblem> {
    if (models.sampling_time() - cfg.sampling_time).abs() > 1e-12 {
        return Err(Error::Usage(format!(
            "model sampling time {} differs from controller sampling time {}",
            models.sampling_time(),
            cfg.sampling_time
        )));
    }
    let nu = conf.nu();
    let mut targets = Vec::new();
    for intention in belief.likely_set() {
        let pred = rollout(
            models.get(intention),
            target,
            cfg.horizon + cfg.terminal_lookahead,
        )?;
        let d_sigma = pred.sigmas.iter().map(|s| nu * s[0].hypot(s[1])).collect();
        targets.push(DistanceConstraintSpec::new(
            intention,
            pred.means(),
            d_sigma,
        )?);
    }
    OcpProblem::new(*state, path.clone(), cfg.clone(), targets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    MaxIter,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Feasible => "feasible",
            Self::Infeasible => "infeasible",
            Self::MaxIter => "max_iter",
        }
    }
}

/// Result of re-checking a candidate input sequence against every constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Largest constraint violation, 0 when all hold.
    pub max_violation: f64,
    /// Name of the constraint attaining `max_violation`.
    pub worst: String,
    pub passed: bool,
}

/// Independent re-evaluation of all constraints for `inputs` applied from the problem's initial state.
pub fn audit_inputs(problem: &OcpProblem, inputs: &[EgoInput]) -> AuditReport {
    let cfg = &problem.config;
    let n = problem.horizon();
    let mut worst = (0.0f64, String::from("none"));
    let mut note = |v: f64, name: &dyn Fn() -> String| {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > worst.0 {
            worst = (v, name());
        }
    };
    if inputs.len() != n {
        return AuditReport {
            max_violation: f64::INFINITY,
            worst: format!("input count {} != horizon {n}", inputs.len()),
            passed: false,
        };
    }
    for (j, u) in inputs.iter().enumerate() {
        note(cfg.accel_min - u.ua, &|| format!("u_a lower at {j}"));
        note(u.ua - cfg.accel_max, &|| format!("u_a upper at {j}"));
        note(u.udelta.abs() - cfg.steer_rate_max, &|| {
            format!("u_delta bound at {j}")
        });
        note(cfg.us_min - u.us, &|| format!("u_s lower at {j}"));
        note(u.us - cfg.us_max, &|| format!("u_s upper at {j}"));
    }
    let states = match problem.simulate(inputs) {
        Ok(s) => s,
        Err(e) => {
            return AuditReport {
                max_violation: f64::INFINITY,
                worst: e.to_string(),
                passed: false,
            }
        }
    };
    for (j, x) in states.iter().enumerate().skip(1) {
        note(-x.v, &|| format!("v lower at {j}"));
        note(x.v - cfg.v_max, &|| format!("v upper at {j}"));
        note(x.delta.abs() - cfg.delta_max, &|| {
            format!("delta bound at {j}")
        });
        note(-x.vs, &|| format!("v_s lower at {j}"));
        note(-x.s, &|| format!("s lower at {j}"));
        for t in &problem.targets {
            let m = t.means[j];
            let d = (x.px - m[0]).hypot(x.py - m[1]);
            note(t.d_ref(j, x.v, cfg) - d, &|| {
                format!("distance to {} at {j}", t.intention)
            });
        }
    }
    let last = states[n];
    let p = problem.path.position(last.s);
    let dev = (last.px - p[0]).hypot(last.py - p[1]);
    note(dev - cfg.terminal_band, &|| "terminal band".to_string());
    AuditReport {
        max_violation: worst.0,
        passed: worst.0 <= cfg.audit_tolerance,
        worst: worst.1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub inputs: Vec<EgoInput>,
    /// Predicted states `0..=N`.
    pub states: Vec<EgoState>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    /// Objective after each accepted SQP step, starting with the initial guess.
    pub objective_history: Vec<f64>,
    pub audit: AuditReport,
}

impl OcpSolution {
    pub fn outputs(&self) -> Vec<[f64; 2]> {
        self.states.iter().map(EgoState::position).collect()
    }

    pub fn path_parameters(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.s).collect()
    }

    /// Whether the first input may be applied: not infeasible and audited.
    pub fn is_admissible(&self) -> bool {
        self.status != SolveStatus::Infeasible && self.audit.passed
    }

    /// One-step shift with the last input repeated.
    pub fn shifted_inputs(&self) -> Vec<EgoInput> {
        let mut out: Vec<EgoInput> = self.inputs.iter().skip(1).copied().collect();
        if let Some(last) = self.inputs.last() {
            out.push(*last);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn straight_problem(targets: Vec<DistanceConstraintSpec>) -> OcpProblem {
        let path =
            PathReference::with_constant_speed(vec![[1.75, -40.0], [1.75, 60.0]], 10.0).unwrap();
        let x0 = EgoState {
            px: 1.75,
            py: -40.0,
            v: 10.0,
            psi: std::f64::consts::FRAC_PI_2,
            delta: 0.0,
            vs: 10.0,
            s: 0.0,
        };
        OcpProblem::new(x0, path, MpcConfig::default(), targets).unwrap()
    }

    #[test]
    fn zero_tightening_reduces_to_the_safety_distance() {
        let cfg = MpcConfig::default();
        let spec =
            DistanceConstraintSpec::new(Intention::TurnRight, vec![[0.0, 0.0]; 41], vec![0.0; 41])
                .unwrap();
        for v in [0.0, 1.0, 7.5, 12.0] {
            assert_eq!(spec.d_ref(5, v, &cfg), cfg.safety_distance(v));
        }
    }

    #[test]
    fn constraint_count_scales_with_likely_set() {
        let spec =
            |i| DistanceConstraintSpec::new(i, vec![[50.0, 50.0]; 41], vec![0.0; 41]).unwrap();
        let p = straight_problem(Intention::ALL.iter().map(|&i| spec(i)).collect());
        assert_eq!(p.distance_constraint_count(), 120);
        let p = straight_problem(vec![spec(Intention::TurnRight)]);
        assert_eq!(p.distance_constraint_count(), 40);
    }

    #[test]
    fn audit_accepts_cruise_and_flags_violations() {
        let p = straight_problem(vec![]);
        let cruise = p.default_inputs();
        let r = audit_inputs(&p, &cruise);
        assert!(r.passed, "{r:?}");

        let mut bad = cruise.clone();
        bad[3].ua = -7.0;
        let r = audit_inputs(&p, &bad);
        assert!(!r.passed && r.worst.contains("u_a"));

        let blocked = DistanceConstraintSpec::new(
            Intention::StraightOn,
            vec![[1.75, -35.0]; 41],
            vec![0.0; 41],
        )
        .unwrap();
        let p = straight_problem(vec![blocked]);
        let r = audit_inputs(&p, &cruise);
        assert!(!r.passed && r.worst.contains("distance"));
    }

    #[test]
    fn short_predictions_are_rejected() {
        let spec =
            DistanceConstraintSpec::new(Intention::TurnLeft, vec![[0.0, 0.0]; 10], vec![0.0; 10])
                .unwrap();
        let path = PathReference::with_constant_speed(vec![[0.0, 0.0], [0.0, 10.0]], 5.0).unwrap();
        let x0 = EgoState::from_array([0.0; 7]);
        assert!(OcpProblem::new(x0, path, MpcConfig::default(), vec![spec]).is_err());
    }
}
