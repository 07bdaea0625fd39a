//! Warm-started receding-horizon operation with a braking fallback.

use serde::{Deserialize, Serialize};

use super::dynamics::{EgoInput, EgoState};
use super::ocp::{assemble_ocp, audit_inputs, OcpProblem, OcpSolution, SolveStatus};
use super::path::PathReference;
use super::sqp::solve_ocp;
use super::MpcConfig;
use crate::classifier::IntentionBelief;
use crate::driver::{ConfidenceConfig, ModelSet, PositionDistribution};
use crate::error::Result;

/// Maximum braking, no steering change, path parameter decelerating.
pub fn fallback_input(cfg: &MpcConfig) -> EgoInput {
    EgoInput {
        ua: cfg.fallback_accel,
        udelta: 0.0,
        us: cfg.us_min,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub fallback: bool,
    /// Whether the shifted previous solution satisfies every constraint of
    /// this step's problem. `None` when no admissible previous solution exists.
    pub warm_start_feasible: Option<bool>,
    pub warm_start_violation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub input: EgoInput,
    pub problem: OcpProblem,
    pub solution: OcpSolution,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone)]
pub struct Controller {
    config: MpcConfig,
    path: PathReference,
    confidence: ConfidenceConfig,
    warm: Option<Vec<EgoInput>>,
    previous_admissible: bool,
}

impl Controller {
    pub fn new(
        config: MpcConfig,
        path: PathReference,
        confidence: ConfidenceConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            path,
            confidence,
            warm: None,
            previous_admissible: false,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn path(&self) -> &PathReference {
        &self.path
    }

    pub fn confidence(&self) -> &ConfidenceConfig {
        &self.confidence
    }

    /// Builds and solves the current OCP, returning the input to apply.
    pub fn receding_horizon_step(
        &mut self,
        state: &EgoState,
        belief: &IntentionBelief,
        models: &ModelSet,
        target: &PositionDistribution,
    ) -> Result<StepOutcome> {
        let problem = assemble_ocp(
            state,
            belief,
            models,
            &self.path,
            &self.confidence,
            &self.config,
            target,
        )?;
        self.step_problem(problem)
    }

    /// Solves an already assembled problem with the stored warm start.
    pub fn step_problem(&mut self, problem: OcpProblem) -> Result<StepOutcome> {
        let (warm_start_feasible, warm_start_violation) =
            match (&self.warm, self.previous_admissible) {
                (Some(ws), true) => {
                    let audit = audit_inputs(&problem, ws);
                    if !audit.passed {
                        log::debug!(
                            "shifted warm start violates {} by {:.3e}",
                            audit.worst,
                            audit.max_violation
                        );
                    }
                    (Some(audit.passed), Some(audit.max_violation))
                }
                _ => (None, None),
            };
        let solution = solve_ocp(&problem, self.warm.as_deref())?;
        let admissible = solution.is_admissible();
        let input = if admissible {
            solution.inputs[0]
        } else {
            fallback_input(&self.config)
        };
        self.warm = Some(solution.shifted_inputs());
        self.previous_admissible = admissible;
        let diagnostics = StepDiagnostics {
            status: solution.status,
            iterations: solution.iterations,
            fallback: !admissible,
            warm_start_feasible,
            warm_start_violation,
        };
        Ok(StepOutcome {
            input,
            problem,
            solution,
            diagnostics,
        })
    }

    pub fn reset(&mut self) {
        self.warm = None;
        self.previous_admissible = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::discretize;

    fn setup() -> (Controller, OcpProblem) {
        let path =
            PathReference::with_constant_speed(vec![[1.75, -40.0], [1.75, 60.0]], 10.0).unwrap();
        let c = Controller::new(
            MpcConfig::default(),
            path.clone(),
            ConfidenceConfig::new(0.01).unwrap(),
        )
        .unwrap();
        let x0 = EgoState {
            px: 1.75,
            py: -40.0,
            v: 9.0,
            psi: std::f64::consts::FRAC_PI_2,
            delta: 0.0,
            vs: 9.0,
            s: 0.0,
        };
        let p = OcpProblem::new(x0, path, MpcConfig::default(), vec![]).unwrap();
        (c, p)
    }

    #[test]
    fn second_step_in_an_unchanged_world_converges_quickly() {
        let (mut c, p) = setup();
        let first = c.step_problem(p.clone()).unwrap();
        assert!(!first.diagnostics.fallback);
        let next = discretize(
            &p.initial,
            &first.input,
            p.config.sampling_time,
            p.config.wheelbase,
        )
        .unwrap();
        let p2 = OcpProblem { initial: next, ..p };
        let second = c.step_problem(p2).unwrap();
        assert_eq!(second.diagnostics.warm_start_feasible, Some(true));
        assert!(
            second.diagnostics.iterations <= 3,
            "{}",
            second.diagnostics.iterations
        );
    }

    #[test]
    fn fallback_is_maximum_braking() {
        let cfg = MpcConfig::default();
        assert_eq!(
            fallback_input(&cfg),
            EgoInput {
                ua: cfg.fallback_accel,
                udelta: 0.0,
                us: cfg.us_min
            }
        );
    }
}
