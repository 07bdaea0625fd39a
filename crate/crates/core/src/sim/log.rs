//! Per-step scenario logs and their summaries.
//!
//! `log.csv` columns, in order:
//!
//! ```text
//! k, t, ego_px, ego_py, ego_v, ego_psi, ego_delta, ego_vs, ego_s,
//! u_a, u_delta, u_s, target_px, target_py, observed_px, observed_py,
//! p_right, p_left, p_straight, likely_set, pruned_mass, certificate,
//! distance, d_safe, d_ref_right, d_ref_left, d_ref_straight,
//! predicted_margin, status, iterations, fallback, warm_start_feasible,
//! lateral_error
//! ```
//!
//! Target columns are empty when the scenario has no target; `d_ref_*` is
//! empty for intentions outside the likely set. `d_ref_*` is the required
//! distance at the first predicted step and `predicted_margin` the smallest
//! planned `d̂ − d_ref` over all constrained intentions and steps.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::IntentionBelief;
use crate::driver::Intention;
use crate::error::{Error, Result};
use crate::mpc::{EgoState, MpcConfig, PathReference, StepOutcome};
use crate::synth::IntersectionGeometry;

use super::{Scenario, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub k: usize,
    pub t: f64,
    pub ego_px: f64,
    pub ego_py: f64,
    pub ego_v: f64,
    pub ego_psi: f64,
    pub ego_delta: f64,
    pub ego_vs: f64,
    pub ego_s: f64,
    pub u_a: f64,
    pub u_delta: f64,
    pub u_s: f64,
    pub target_px: Option<f64>,
    pub target_py: Option<f64>,
    pub observed_px: Option<f64>,
    pub observed_py: Option<f64>,
    pub p_right: f64,
    pub p_left: f64,
    pub p_straight: f64,
    pub likely_set: String,
    pub pruned_mass: f64,
    pub certificate: Option<f64>,
    pub distance: Option<f64>,
    pub d_safe: f64,
    pub d_ref_right: Option<f64>,
    pub d_ref_left: Option<f64>,
    pub d_ref_straight: Option<f64>,
    pub predicted_margin: Option<f64>,
    pub status: String,
    pub iterations: usize,
    pub fallback: bool,
    pub warm_start_feasible: Option<bool>,
    pub lateral_error: f64,
}

impl LogRow {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        k: usize,
        t: f64,
        ego: &EgoState,
        outcome: &StepOutcome,
        target: Option<([f64; 2], [f64; 2])>,
        belief: &IntentionBelief,
        certificate: Option<f64>,
        path: &PathReference,
        cfg: &MpcConfig,
    ) -> Self {
        let sol = &outcome.solution;
        let mut d_ref = [None; 3];
        let mut margin: Option<f64> = None;
        if sol.states.len() > cfg.horizon {
            for spec in &outcome.problem.targets {
                d_ref[spec.intention.index()] = Some(spec.d_ref(1, sol.states[1].v, cfg));
                for (j, x) in sol.states.iter().enumerate().skip(1) {
                    let m = spec.means[j];
                    let gap = (x.px - m[0]).hypot(x.py - m[1]) - spec.d_ref(j, x.v, cfg);
                    margin = Some(margin.map_or(gap, |g| g.min(gap)));
                }
            }
        }
        let p = belief.probabilities();
        let distance = target.map(|(_, truth)| (ego.px - truth[0]).hypot(ego.py - truth[1]));
        let search = (ego.s - 10.0).max(0.0);
        Self {
            k,
            t,
            ego_px: ego.px,
            ego_py: ego.py,
            ego_v: ego.v,
            ego_psi: ego.psi,
            ego_delta: ego.delta,
            ego_vs: ego.vs,
            ego_s: ego.s,
            u_a: outcome.input.ua,
            u_delta: outcome.input.udelta,
            u_s: outcome.input.us,
            target_px: target.map(|t| t.1[0]),
            target_py: target.map(|t| t.1[1]),
            observed_px: target.map(|t| t.0[0]),
            observed_py: target.map(|t| t.0[1]),
            p_right: p[Intention::TurnRight.index()],
            p_left: p[Intention::TurnLeft.index()],
            p_straight: p[Intention::StraightOn.index()],
            likely_set: belief.likely_label(),
            pruned_mass: belief.pruned_mass(),
            certificate,
            distance,
            d_safe: cfg.safety_distance(ego.v),
            d_ref_right: d_ref[Intention::TurnRight.index()],
            d_ref_left: d_ref[Intention::TurnLeft.index()],
            d_ref_straight: d_ref[Intention::StraightOn.index()],
            predicted_margin: margin,
            status: outcome.diagnostics.status.as_str().to_string(),
            iterations: outcome.diagnostics.iterations,
            fallback: outcome.diagnostics.fallback,
            warm_start_feasible: outcome.diagnostics.warm_start_feasible,
            lateral_error: path.lateral_error(ego.position(), search, ego.s + 10.0),
        }
    }

    pub fn probability(&self, i: Intention) -> f64 {
        match i {
            Intention::TurnRight => self.p_right,
            Intention::TurnLeft => self.p_left,
            Intention::StraightOn => self.p_straight,
        }
    }

    fn likely_count(&self) -> usize {
        [self.p_right, self.p_left, self.p_straight]
            .iter()
            .filter(|p| **p > 0.0)
            .count()
    }
}

/// Planned distances for one intention at one solver call, steps `0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSnapshot {
    pub k: usize,
    pub intention: Intention,
    /// Whether the solution was applied (not the fallback).
    pub admissible: bool,
    pub predicted_distance: Vec<f64>,
    /// `d_safe(v̂(j)) + d_σ(j)`.
    pub required_distance: Vec<f64>,
}

impl PredictionSnapshot {
    pub(crate) fn from_outcome(k: usize, outcome: &StepOutcome) -> Vec<Self> {
        let sol = &outcome.solution;
        let cfg = &outcome.problem.config;
        if sol.states.len() <= cfg.horizon {
            return Vec::new();
        }
        outcome
            .problem
            .targets
            .iter()
            .map(|spec| {
                let (predicted_distance, required_distance) = sol
                    .states
                    .iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let m = spec.means[j];
                        ((x.px - m[0]).hypot(x.py - m[1]), spec.d_ref(j, x.v, cfg))
                    })
                    .unzip();
                Self {
                    k,
                    intention: spec.intention,
                    admissible: !outcome.diagnostics.fallback,
                    predicted_distance,
                    required_distance,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The ego path parameter passed the last knot.
    Exited,
    StepCap,
    TargetExhausted,
    /// The fallback stayed engaged longer than the configured streak limit.
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub seed: u64,
    pub intention: Option<Intention>,
    pub steps: usize,
    pub termination: Termination,
    pub degraded: bool,
    /// Steps with `d(k) < d_safe(v(k))`.
    pub violation_steps: usize,
    /// Smallest `d(k) − d_safe(v(k))`.
    pub min_margin: Option<f64>,
    pub min_certificate: Option<f64>,
    pub true_intention_pruned: bool,
    /// First time the likely set is exactly the true intention.
    pub identification_time: Option<f64>,
    /// First time each intention left the likely set, `[right, left, straight]`.
    pub pruning_times: [Option<f64>; 3],
    pub fallback_steps: usize,
    pub max_fallback_streak: usize,
    pub warm_start_checks: usize,
    pub warm_start_feasible: usize,
    pub min_speed: f64,
    pub min_speed_time: f64,
    pub final_speed: f64,
    pub mean_iterations: f64,
    pub max_lateral_error: f64,
    /// First and last time the target was inside the intersection box.
    pub target_in_box: Option<(f64, f64)>,
}

impl ScenarioSummary {
    pub(crate) fn from_rows(
        scenario: &Scenario,
        rows: &[LogRow],
        termination: Termination,
        _config: &SimConfig,
        geometry: &IntersectionGeometry,
        intention: Option<Intention>,
    ) -> Self {
        let mut violation_steps = 0;
        let mut min_margin: Option<f64> = None;
        let mut min_certificate: Option<f64> = None;
        let mut pruning_times = [None; 3];
        let mut identification_time = None;
        let mut fallback_steps = 0;
        let mut streak = 0;
        let mut max_streak = 0;
        let mut checks = 0;
        let mut feasible = 0;
        let mut min_speed = f64::INFINITY;
        let mut min_speed_time = 0.0;
        let mut iterations = 0usize;
        let mut max_lat = 0.0f64;
        let mut in_box: Option<(f64, f64)> = None;
        for r in rows {
            if let (Some(d), Some(c)) = (r.distance, r.certificate) {
                if d < r.d_safe {
                    violation_steps += 1;
                }
                let m = d - r.d_safe;
                min_margin = Some(min_margin.map_or(m, |x| x.min(m)));
                min_certificate = Some(min_certificate.map_or(c, |x| x.min(c)));
                for i in Intention::ALL {
                    if pruning_times[i.index()].is_none() && r.probability(i) == 0.0 {
                        pruning_times[i.index()] = Some(r.t);
                    }
                }
                if let Some(i) = intention {
                    if identification_time.is_none()
                        && r.likely_count() == 1
                        && r.probability(i) > 0.0
                    {
                        identification_time = Some(r.t);
                    }
                }
            }
            if let (Some(x), Some(y)) = (r.target_px, r.target_py) {
                if geometry.in_intersection([x, y]) {
                    in_box = Some(in_box.map_or((r.t, r.t), |(a, _)| (a, r.t)));
                }
            }
            if r.fallback {
                fallback_steps += 1;
                streak += 1;
                max_streak = max_streak.max(streak);
            } else {
                streak = 0;
            }
            if let Some(ok) = r.warm_start_feasible {
                checks += 1;
                feasible += ok as usize;
            }
            if r.ego_v < min_speed {
                min_speed = r.ego_v;
                min_speed_time = r.t;
            }
            iterations += r.iterations;
            max_lat = max_lat.max(r.lateral_error.abs());
        }
        Self {
            name: scenario.name.clone(),
            seed: scenario.seed,
            intention,
            steps: rows.len(),
            termination,
            degraded: termination == Termination::Degraded,
            violation_steps,
            min_margin,
            min_certificate,
            true_intention_pruned: intention.is_some_and(|i| pruning_times[i.index()].is_some()),
            identification_time,
            pruning_times,
            fallback_steps,
            max_fallback_streak: max_streak,
            warm_start_checks: checks,
            warm_start_feasible: feasible,
            min_speed: if rows.is_empty() { 0.0 } else { min_speed },
            min_speed_time,
            final_speed: rows.last().map_or(0.0, |r| r.ego_v),
            mean_iterations: iterations as f64 / rows.len().max(1) as f64,
            max_lateral_error: max_lat,
            target_in_box: in_box,
        }
    }

    /// No safety-distance violation and not degraded.
    pub fn passed(&self) -> bool {
        self.violation_steps == 0 && !self.degraded
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLog {
    pub name: String,
    pub seed: u64,
    pub intention: Option<Intention>,
    pub rows: Vec<LogRow>,
    pub predictions: Vec<PredictionSnapshot>,
    pub summary: ScenarioSummary,
}

impl ScenarioLog {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)
                .map_err(|e| Error::Data(format!("log serialization: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Data(format!("log serialization: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<LogRow>> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        r.deserialize()
            .collect::<std::result::Result<Vec<LogRow>, _>>()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Writes `log.csv`, `summary.json` and `predictions.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("log.csv", self.to_csv()?)?;
        write("summary.json", serde_json::to_string_pretty(&self.summary)?)?;
        write(
            "predictions.json",
            serde_json::to_string(&self.predictions)?,
        )?;
        Ok(())
    }
}
