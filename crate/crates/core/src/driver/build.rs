//! Training intention models from recorded trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{estimate_velocities, Intention, IntentionModel, Trajectory};
use crate::error::{Error, Result};
use crate::gp::{train_hyperparameters, KernelParams, TrainingConfig, TrainingSet};

/// Number of points in a prototype path.
pub const PROTOTYPE_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub sampling_time: f64,
    /// Number of (position, velocity) pairs each GP is trained on.
    pub subset_size: usize,
    pub restarts: usize,
    pub training: TrainingConfig,
    /// Initial isotropic lengthscale in meters.
    pub initial_lengthscale: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            sampling_time: 0.04,
            subset_size: 250,
            restarts: 2,
            training: TrainingConfig::default(),
            initial_lengthscale: 10.0,
        }
    }
}

/// Trains the velocity-field GPs of one intention on a uniform random subset of pooled pairs.
///
/// When `subset_size` equals the pooled pair count every pair is used in order.
pub fn build_model(
    intention: Intention,
    trajectories: &[Trajectory],
    config: &BuildConfig,
    seed: u64,
) -> Result<IntentionModel> {
    if trajectories.is_empty() {
        return Err(Error::Usage(format!(
            "no trajectories given for {intention}"
        )));
    }
    if config.subset_size == 0 {
        return Err(Error::Usage("subset size must be at least 1".into()));
    }
    let mut pairs = Vec::new();
    for t in trajectories {
        pairs.extend(estimate_velocities(t, config.sampling_time)?);
    }
    let n = pairs.len();
    if config.subset_size > n {
        return Err(Error::Usage(format!(
            "subset size {} exceeds the {n} pooled pairs for {intention}",
            config.subset_size
        )));
    }
    let chosen: Vec<usize> = if config.subset_size == n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, config.subset_size).into_vec();
        idx.sort_unstable();
        idx
    };
    let rows: Vec<Vec<f64>> = chosen
        .iter()
        .map(|&i| vec![pairs[i].px, pairs[i].py])
        .collect();
    let vx: Vec<f64> = chosen.iter().map(|&i| pairs[i].vx).collect();
    let vy: Vec<f64> = chosen.iter().map(|&i| pairs[i].vy).collect();

    let fit_axis = |targets: &[f64], axis_seed: u64| -> Result<_> {
        let set = TrainingSet::from_rows(&rows, targets)?;
        let init = initial_params(targets, config.initial_lengthscale)?;
        let out = train_hyperparameters(&set, &init, config.restarts, axis_seed, &config.training)?;
        log::debug!(
            "{intention}: lml {:.3}, grad norm {:.2e}, params {:?}",
            out.log_likelihood,
            out.gradient_norm(),
            out.gp.params()
        );
        Ok(out.gp)
    };
    let gp_vx = fit_axis(&vx, seed.wrapping_mul(2).wrapping_add(1))?;
    let gp_vy = fit_axis(&vy, seed.wrapping_mul(2).wrapping_add(2))?;
    IntentionModel::new(
        intention,
        gp_vx,
        gp_vy,
        config.sampling_time,
        prototype_path(trajectories, PROTOTYPE_POINTS)?,
    )
}

fn initial_params(targets: &[f64], lengthscale: f64) -> Result<KernelParams> {
    // Zero prior mean, so the second moment sets the output scale.
    let second = targets.iter().map(|t| t * t).sum::<f64>() / targets.len() as f64;
    let scale = second.max(1e-2);
    KernelParams::isotropic(scale, lengthscale, 0.1 * scale, 2)
}

/// Pointwise average of the trajectories, each resampled uniformly in normalized arc length.
pub fn prototype_path(trajectories: &[Trajectory], points: usize) -> Result<Vec<[f64; 2]>> {
    if trajectories.is_empty() {
        return Err(Error::Usage(
            "prototype path needs at least one trajectory".into(),
        ));
    }
    if points < 2 {
        return Err(Error::Usage(
            "prototype path needs at least 2 points".into(),
        ));
    }
    let mut acc = vec![[0.0; 2]; points];
    for t in trajectories {
        let resampled = resample_arc_length(&t.positions(), points)?;
        for (a, p) in acc.iter_mut().zip(resampled) {
            a[0] += p[0];
            a[1] += p[1];
        }
    }
    let m = trajectories.len() as f64;
    Ok(acc.into_iter().map(|a| [a[0] / m, a[1] / m]).collect())
}

fn resample_arc_length(pos: &[[f64; 2]], points: usize) -> Result<Vec<[f64; 2]>> {
    if pos.len() < 2 {
        return Err(Error::Data(
            "trajectory too short for a prototype path".into(),
        ));
    }
    let mut cum = Vec::with_capacity(pos.len());
    cum.push(0.0);
    for w in pos.windows(2) {
        let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    if total <= 0.0 {
        return Err(Error::Data("trajectory has zero length".into()));
    }
    let mut out = Vec::with_capacity(points);
    let mut seg = 0;
    for q in 0..points {
        let target = total * q as f64 / (points - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 {
            ((target - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push([
            pos[seg][0] + f * (pos[seg + 1][0] - pos[seg][0]),
            pos[seg][1] + f * (pos[seg + 1][1] - pos[seg][1]),
        ]);
    }
    Ok(out)
}
