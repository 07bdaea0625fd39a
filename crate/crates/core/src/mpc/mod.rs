//! Ego vehicle model, speed-assigned path reference and the multi-mode OCP.

mod controller;
mod dynamics;
mod ocp;
mod path;
mod qp;
mod sqp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use controller::{fallback_input, Controller, StepDiagnostics, StepOutcome};
pub use dynamics::{discretize, ego_continuous_dynamics, EgoInput, EgoState, NU, NX};
pub use ocp::{
    assemble_ocp, audit_inputs, AuditReport, DistanceConstraintSpec, OcpProblem, OcpSolution,
    SolveStatus,
};
pub use path::{PathReference, PathSpec};
pub use sqp::solve_ocp;

/// Controller and OCP settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub sampling_time: f64,
    pub wheelbase: f64,
    pub v_max: f64,
    pub delta_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_rate_max: f64,
    pub us_min: f64,
    pub us_max: f64,
    /// Output tracking weights `diag(Q)`.
    pub q_position: [f64; 2],
    /// Input weights `diag(R)` for `(u_a, u_δ, u_s)`.
    pub r_input: [f64; 3],
    pub q_speed: f64,
    /// Maximum distance between the terminal output and the path.
    pub terminal_band: f64,
    /// Time gap of the speed-dependent safety distance, s.
    pub safety_time_gap: f64,
    /// Safety distance floor, m.
    pub d_min: f64,
    /// Acceleration applied when no admissible solution is available.
    pub fallback_accel: f64,
    /// Extra distance the solver keeps beyond `d_ref`; the audit checks `d_ref` itself.
    pub distance_margin: f64,
    /// Growth of the distance margin per second of prediction, m/s.
    pub distance_margin_growth: f64,
    /// Amount by which the solver tightens the terminal band.
    pub terminal_margin: f64,
    /// Steps past the horizon, under the last input repeated, on which the
    /// solver also enforces the state, distance and band constraints.
    pub terminal_lookahead: usize,
    pub max_iterations: usize,
    /// Distance constraints with more slack than this are left out of the QP subproblem.
    pub screening_distance: f64,
    pub audit_tolerance: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 40,
            sampling_time: 0.04,
            wheelbase: 2.7,
            v_max: 15.0,
            delta_max: 0.6,
            accel_min: -6.0,
            accel_max: 2.5,
            steer_rate_max: 0.5,
            us_min: -6.0,
            us_max: 6.0,
            q_position: [10.0, 10.0],
            r_input: [0.1, 1.0, 0.1],
            q_speed: 1.0,
            terminal_band: 0.5,
            safety_time_gap: 1.0,
            d_min: 2.0,
            fallback_accel: -6.0,
            distance_margin: 0.5,
            terminal_margin: 0.05,
            distance_margin_growth: 1.0,
            terminal_lookahead: 5,
            max_iterations: 4,
            screening_distance: 6.0,
            audit_tolerance: 1e-6,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sampling_time", self.sampling_time),
            ("wheelbase", self.wheelbase),
            ("v_max", self.v_max),
            ("delta_max", self.delta_max),
            ("terminal_band", self.terminal_band),
            ("audit_tolerance", self.audit_tolerance),
            ("screening_distance", self.screening_distance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        let nonneg = [
            ("steer_rate_max", self.steer_rate_max),
            ("q_speed", self.q_speed),
            ("safety_time_gap", self.safety_time_gap),
            ("d_min", self.d_min),
            ("distance_margin", self.distance_margin),
            ("distance_margin_growth", self.distance_margin_growth),
            ("terminal_margin", self.terminal_margin),
            ("q_position[0]", self.q_position[0]),
            ("q_position[1]", self.q_position[1]),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        if self.r_input.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config("r_input weights must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.delta_max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("delta_max must stay below π/2".into()));
        }
        if !(self.accel_min < 0.0 && self.accel_max > 0.0) {
            return Err(Error::Config(
                "accel_min must be negative and accel_max positive".into(),
            ));
        }
        if !(self.us_min < 0.0 && self.us_max > 0.0) {
            return Err(Error::Config(
                "us_min must be negative and us_max positive".into(),
            ));
        }
        if !(self.fallback_accel >= self.accel_min && self.fallback_accel < 0.0) {
            return Err(Error::Config(
                "fallback_accel must lie in [accel_min, 0)".into(),
            ));
        }
        if self.terminal_margin >= self.terminal_band {
            return Err(Error::Config(
                "terminal_margin must be smaller than terminal_band".into(),
            ));
        }
        Ok(())
    }

    /// Time covered by the prediction horizon.
    pub fn horizon_time(&self) -> f64 {
        self.horizon as f64 * self.sampling_time
    }

    /// Speed-dependent safety distance `max(τ·v, d_min)`.
    pub fn safety_distance(&self, v: f64) -> f64 {
        (self.safety_time_gap * v).max(self.d_min)
    }

    /// Distance the solver keeps beyond `d_ref` at prediction step `j`.
    pub(crate) fn solver_margin(&self, j: usize) -> f64 {
        self.distance_margin + self.distance_margin_growth * self.sampling_time * j as f64
    }

    pub(crate) fn input_bounds(&self) -> ([f64; NU], [f64; NU]) {
        (
            [self.accel_min, -self.steer_rate_max, self.us_min],
            [self.accel_max, self.steer_rate_max, self.us_max],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_span_the_horizon() {
        let c = MpcConfig::default();
        c.validate().unwrap();
        assert!((c.horizon_time() - 1.6).abs() < 1e-12);
        assert_eq!(c.safety_distance(10.0), 10.0);
        assert_eq!(c.safety_distance(0.5), 2.0);
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        let c = MpcConfig {
            delta_max: 2.0,
            ..MpcConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = MpcConfig {
            horizon: 0,
            ..MpcConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(toml::from_str::<MpcConfig>("bogus = 1").is_err());
    }
}
