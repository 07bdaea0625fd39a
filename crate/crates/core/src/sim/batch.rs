//! Parallel scenario batches and their aggregate report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_scenario, Scenario, ScenarioSummary, SimConfig};
use crate::driver::ModelSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub scenario_count: usize,
    pub total_steps: usize,
    /// Steps with `d(k) < d_safe(v(k))`, summed over scenarios.
    pub violation_steps: usize,
    /// Scenarios with at least one violating step.
    pub violating_scenarios: usize,
    pub violating_fraction: f64,
    /// Mean over scenarios of `1 − min_k P_cs(k)`.
    pub certificate_bound: f64,
    /// `violating_fraction <= certificate_bound`.
    pub certificate_consistent: bool,
    /// Violating scenarios in which the true intention was never pruned.
    pub violations_with_true_intention_kept: usize,
    pub true_intention_pruned: usize,
    /// Fallback steps over all steps.
    pub fallback_rate: f64,
    pub degraded: usize,
    /// Shifted warm starts feasible for the successor problem, over non-degraded scenarios.
    pub warm_start_checks: usize,
    pub warm_start_feasible: usize,
    pub warm_start_feasible_rate: f64,
    pub mean_min_margin: Option<f64>,
    pub scenarios: Vec<ScenarioSummary>,
}

impl BatchReport {
    pub fn from_summaries(scenarios: Vec<ScenarioSummary>) -> Self {
        let n = scenarios.len();
        let total_steps = scenarios.iter().map(|s| s.steps).sum();
        let violation_steps = scenarios.iter().map(|s| s.violation_steps).sum();
        let violating: Vec<&ScenarioSummary> =
            scenarios.iter().filter(|s| s.violation_steps > 0).collect();
        let with_target: Vec<&ScenarioSummary> = scenarios
            .iter()
            .filter(|s| s.min_certificate.is_some())
            .collect();
        let certificate_bound = if with_target.is_empty() {
            1.0
        } else {
            with_target
                .iter()
                .map(|s| 1.0 - s.min_certificate.unwrap())
                .sum::<f64>()
                / with_target.len() as f64
        };
        let violating_fraction = violating.len() as f64 / n.max(1) as f64;
        let fallback: usize = scenarios.iter().map(|s| s.fallback_steps).sum();
        let healthy = scenarios.iter().filter(|s| !s.degraded);
        let (checks, ok) = healthy.fold((0, 0), |(c, f), s| {
            (c + s.warm_start_checks, f + s.warm_start_feasible)
        });
        let margins: Vec<f64> = scenarios.iter().filter_map(|s| s.min_margin).collect();
        Self {
            scenario_count: n,
            total_steps,
            violation_steps,
            violating_scenarios: violating.len(),
            violating_fraction,
            certificate_bound,
            certificate_consistent: violating_fraction <= certificate_bound,
            violations_with_true_intention_kept: violating
                .iter()
                .filter(|s| !s.true_intention_pruned)
                .count(),
            true_intention_pruned: scenarios.iter().filter(|s| s.true_intention_pruned).count(),
            fallback_rate: fallback as f64 / (total_steps as f64).max(1.0),
            degraded: scenarios.iter().filter(|s| s.degraded).count(),
            warm_start_checks: checks,
            warm_start_feasible: ok,
            warm_start_feasible_rate: if checks == 0 {
                1.0
            } else {
                ok as f64 / checks as f64
            },
            mean_min_margin: if margins.is_empty() {
                None
            } else {
                Some(margins.iter().sum::<f64>() / margins.len() as f64)
            },
            scenarios,
        }
    }

    /// Zero violations and zero degraded runs.
    pub fn passed(&self) -> bool {
        self.violation_steps == 0 && self.degraded == 0
    }
}

/// Runs every scenario on `jobs` threads (0 picks the rayon default). The
/// report keeps the input order whatever the completion order.
pub fn run_batch(
    scenarios: &[Scenario],
    config: &SimConfig,
    models: &ModelSet,
    jobs: usize,
) -> Result<BatchReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let summaries = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| run_scenario(s, config, models).map(|log| log.summary))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BatchReport::from_summaries(summaries))
}
