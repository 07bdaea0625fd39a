//! Empirical coverage of Chebyshev tubes on held-out trajectories.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConfidenceConfig, IntentionModel, PositionDistribution, Trajectory};
use crate::error::{Error, Result};

/// A trajectory counts as covered when at least this fraction of its horizons is contained.
pub const HORIZON_CONTAINMENT_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub horizon: usize,
    pub nu: f64,
    /// Fraction of trajectories covered on the x and y axis separately.
    pub per_axis: [f64; 2],
    /// Fraction of trajectories covered on both axes jointly.
    pub total: f64,
    pub horizon_count: usize,
    pub trajectory_count: usize,
    /// Trajectories too short to hold a single horizon.
    pub skipped: usize,
}

/// Coverage at a single horizon length and confidence level.
pub fn validate_confidence(
    model: &IntentionModel,
    held_out: &[Trajectory],
    horizon: usize,
    conf: &ConfidenceConfig,
) -> Result<ConfidenceReport> {
    let mut r = validate_with_nu(model, held_out, &[horizon], conf.nu())?;
    Ok(r.remove(0))
}

#[derive(Default, Clone, Copy)]
struct Counts {
    horizons: usize,
    contained: [usize; 3],
}

/// Coverage for several horizon lengths at Chebyshev multiplier `nu`.
///
/// Every sample index is a horizon start. One rollout of the longest
/// horizon per start serves all shorter ones.
pub fn validate_with_nu(
    model: &IntentionModel,
    held_out: &[Trajectory],
    horizons: &[usize],
    nu: f64,
) -> Result<Vec<ConfidenceReport>> {
    if held_out.is_empty() {
        return Err(Error::Data(
            "no held-out trajectories to validate against".into(),
        ));
    }
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(Error::Usage("horizon lengths must be at least 1".into()));
    }
    if nu.is_nan() || nu < 0.0 {
        return Err(Error::Usage(format!(
            "tube multiplier must be non-negative, got {nu}"
        )));
    }
    for t in held_out {
        t.check_uniform(model.sampling_time)?;
    }
    let max_n = *horizons.iter().max().unwrap();
    let min_n = *horizons.iter().min().unwrap();

    let per_traj: Vec<Option<Vec<Counts>>> = held_out
        .par_iter()
        .map(|t| {
            let pos = t.positions();
            if pos.len() < min_n + 1 {
                return None;
            }
            let mut counts = vec![Counts::default(); horizons.len()];
            for k in 0..pos.len() - min_n {
                let steps = max_n.min(pos.len() - 1 - k);
                let pred = model.rollout(&PositionDistribution::point(pos[k]), steps);
                // First step at which each axis leaves the tube.
                let mut first_out = [usize::MAX; 2];
                for j in 1..=steps {
                    for axis in 0..2 {
                        if first_out[axis] == usize::MAX {
                            let err = (pos[k + j][axis] - pred.steps[j].mean[axis]).abs();
                            if !(err <= nu * pred.sigmas[j][axis]) {
                                first_out[axis] = j;
                            }
                        }
                    }
                }
                for (c, &n) in counts.iter_mut().zip(horizons) {
                    if n > steps {
                        continue;
                    }
                    c.horizons += 1;
                    let ok = [first_out[0] > n, first_out[1] > n];
                    c.contained[0] += ok[0] as usize;
                    c.contained[1] += ok[1] as usize;
                    c.contained[2] += (ok[0] && ok[1]) as usize;
                }
            }
            Some(counts)
        })
        .collect();

    let skipped_min = per_traj.iter().filter(|c| c.is_none()).count();
    if skipped_min > 0 {
        log::warn!(
            "{skipped_min} held-out trajectories are shorter than {} samples",
            min_n + 1
        );
    }
    let mut reports = Vec::with_capacity(horizons.len());
    for (h, &n) in horizons.iter().enumerate() {
        let mut covered = [0usize; 3];
        let mut used = 0;
        let mut horizon_count = 0;
        for c in per_traj.iter().flatten() {
            let c = c[h];
            if c.horizons == 0 {
                continue;
            }
            used += 1;
            horizon_count += c.horizons;
            for (cov, &inside) in covered.iter_mut().zip(&c.contained) {
                if inside as f64 >= HORIZON_CONTAINMENT_FRACTION * c.horizons as f64 {
                    *cov += 1;
                }
            }
        }
        if used == 0 {
            return Err(Error::Data(format!(
                "all held-out trajectories are shorter than {} samples",
                n + 1
            )));
        }
        let frac = |c: usize| c as f64 / used as f64;
        reports.push(ConfidenceReport {
            horizon: n,
            nu,
            per_axis: [frac(covered[0]), frac(covered[1])],
            total: frac(covered[2]),
            horizon_count,
            trajectory_count: used,
            skipped: held_out.len() - used,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::tests::constant_field_model;

    fn noisy_line(seed: u64) -> Trajectory {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<[f64; 2]> = (0..60)
            .map(|k| {
                [
                    k as f64 * 0.04 + rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                ]
            })
            .collect();
        Trajectory::from_positions(&pos, 0.04, 0.0)
    }

    #[test]
    fn infinite_tube_covers_everything() {
        let model = constant_field_model(1.0, 0.0, 0.04);
        let data: Vec<_> = (0..4).map(noisy_line).collect();
        let r = &validate_with_nu(&model, &data, &[10], f64::INFINITY).unwrap()[0];
        assert_eq!(r.total, 1.0);
        assert_eq!(r.per_axis, [1.0, 1.0]);
        assert_eq!(r.trajectory_count, 4);
        assert_eq!(r.horizon_count, 4 * 50);
    }

    #[test]
    fn zero_width_tube_covers_nothing() {
        let model = constant_field_model(1.0, 0.0, 0.04);
        let data: Vec<_> = (0..4).map(noisy_line).collect();
        let r = &validate_with_nu(&model, &data, &[10], 0.0).unwrap()[0];
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn short_trajectories_are_skipped() {
        let model = constant_field_model(1.0, 0.0, 0.04);
        let short = Trajectory::from_positions(&[[0.0, 0.0], [0.04, 0.0]], 0.04, 0.0);
        let data = vec![noisy_line(1), short.clone()];
        let r =
            validate_confidence(&model, &data, 5, &ConfidenceConfig::new(0.01).unwrap()).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.trajectory_count, 1);
        assert!(
            validate_confidence(&model, &[short], 5, &ConfidenceConfig::new(0.01).unwrap())
                .is_err()
        );
        assert!(
            validate_confidence(&model, &[], 5, &ConfidenceConfig::new(0.01).unwrap()).is_err()
        );
    }

    #[test]
    fn multi_horizon_matches_single_horizon() {
        let model = constant_field_model(1.0, 0.0, 0.04);
        let data: Vec<_> = (0..3).map(noisy_line).collect();
        let all = validate_with_nu(&model, &data, &[5, 20, 40], 1.5).unwrap();
        for r in all {
            let single = &validate_with_nu(&model, &data, &[r.horizon], 1.5).unwrap()[0];
            assert_eq!(&r, single);
        }
    }
}
