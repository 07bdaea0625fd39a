//! Marginal-likelihood gradient and hyperparameter training.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{KernelParams, TrainedGP, TrainingSet};
use crate::error::{Error, Result};

/// Bounds on every log-space hyperparameter.
const LOG_BOUND: f64 = 20.0;

impl TrainedGP {
    /// Gradient of the log marginal likelihood with respect to
    /// `(log sf², log l_1..log l_d, log sn²)`.
    ///
    /// Uses `∂L/∂θ = ½ tr((ααᵀ - K⁻¹) ∂K/∂θ)`. With zero noise the last component is zero.
    pub fn lml_gradient(&self) -> Vec<f64> {
        let n = self.len();
        let d = self.dim();
        let l = &self.chol_factor;
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("factor has a positive diagonal");
        let kinv = linv.transpose() * &linv;
        let alpha = &self.alpha;

        let mut grad = vec![0.0; d + 2];
        let sv = self.params.signal_variance;
        for a in 0..n {
            let za = self.row(a);
            for b in 0..=a {
                let w = alpha[a] * alpha[b] - kinv[(a, b)];
                let factor = if a == b { 0.5 } else { 1.0 };
                let zb = self.row(b);
                let mut dist = 0.0;
                let mut comps = [0.0f64; 8];
                for j in 0..d {
                    let diff = za[j] - zb[j];
                    let c = diff * diff * self.inv_sq_ls[j];
                    dist += c;
                    if j < comps.len() {
                        comps[j] = c;
                    }
                }
                let kf = sv * (-0.5 * dist).exp();
                grad[0] += factor * w * kf;
                for j in 0..d {
                    let c = if j < comps.len() {
                        comps[j]
                    } else {
                        let diff = za[j] - zb[j];
                        diff * diff * self.inv_sq_ls[j]
                    };
                    grad[1 + j] += factor * w * kf * c;
                }
                if a == b {
                    grad[d + 1] += 0.5 * w * self.params.noise_variance;
                }
            }
        }
        grad
    }
}

/// Settings for [`train_hyperparameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Half-width, in decades, of the log-uniform restart perturbation.
    pub restart_spread_decades: f64,
    /// Number of worker threads for restarts; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-5,
            restart_spread_decades: 1.0,
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub log_likelihood: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub params: Option<KernelParams>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub gp: TrainedGP,
    pub log_likelihood: f64,
    pub restarts: Vec<RestartOutcome>,
    /// Index into `restarts` of the returned model.
    pub best: usize,
}

impl TrainingOutcome {
    pub fn converged(&self) -> bool {
        self.restarts[self.best].converged
    }

    pub fn gradient_norm(&self) -> f64 {
        self.restarts[self.best].gradient_norm
    }
}

/// Maximizes the log marginal likelihood by gradient ascent in log-parameter space.
///
/// Each restart uses Barzilai–Borwein step proposals with Armijo backtracking.
/// Restart 0 starts at `init`; later restarts perturb `init` log-uniformly.
/// The restart with the highest final likelihood wins, ties going to the lowest index.
pub fn train_hyperparameters(
    training: &TrainingSet,
    init: &KernelParams,
    restarts: usize,
    seed: u64,
    config: &TrainingConfig,
) -> Result<TrainingOutcome> {
    if restarts == 0 {
        return Err(Error::Usage("restarts must be at least 1".into()));
    }
    init.validate()?;
    if init.noise_variance <= 0.0 {
        return Err(Error::Usage(
            "training requires a positive initial noise variance".into(),
        ));
    }
    if init.dim() != training.dim() {
        return Err(Error::Dimension {
            expected: training.dim(),
            got: init.dim(),
        });
    }

    let base = init.to_log();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = config.restart_spread_decades * std::f64::consts::LN_10;
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|r| {
            if r == 0 {
                base.clone()
            } else {
                base.iter()
                    .map(|t| t + rng.random_range(-spread..=spread))
                    .collect()
            }
        })
        .collect();

    let run = |theta: &Vec<f64>| ascend(training, theta.clone(), config);
    let results: Vec<Option<(TrainedGP, RestartOutcome)>> = match config.jobs {
        Some(j) if j > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
            pool.install(|| starts.par_iter().map(run).collect())
        }
        _ => starts.iter().map(run).collect(),
    };

    let mut best: Option<(usize, f64)> = None;
    let mut outcomes = Vec::with_capacity(restarts);
    let mut models = Vec::with_capacity(restarts);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some((gp, outcome)) => {
                if outcome.log_likelihood.is_finite()
                    && best.is_none_or(|(_, b)| outcome.log_likelihood > b)
                {
                    best = Some((i, outcome.log_likelihood));
                }
                outcomes.push(outcome);
                models.push(Some(gp));
            }
            None => {
                outcomes.push(RestartOutcome {
                    log_likelihood: f64::NAN,
                    iterations: 0,
                    gradient_norm: f64::NAN,
                    converged: false,
                    params: None,
                });
                models.push(None);
            }
        }
    }
    let (idx, lml) =
        best.ok_or_else(|| Error::TrainingFailed(format!("all {restarts} restarts diverged")))?;
    let gp = models[idx].take().expect("best restart has a model");
    Ok(TrainingOutcome {
        gp,
        log_likelihood: lml,
        restarts: outcomes,
        best: idx,
    })
}

fn evaluate(training: &TrainingSet, theta: &[f64]) -> Option<(TrainedGP, f64, Vec<f64>)> {
    let gp = TrainedGP::fit(training.clone(), KernelParams::from_log(theta)).ok()?;
    let lml = gp.log_marginal_likelihood();
    if !lml.is_finite() {
        return None;
    }
    let grad = gp.lml_gradient();
    if grad.iter().any(|g| !g.is_finite()) {
        return None;
    }
    Some((gp, lml, grad))
}

/// Gradient with components that push against an active bound zeroed.
fn projected(theta: &[f64], grad: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(grad)
        .map(|(t, g)| {
            if (*t >= LOG_BOUND && *g > 0.0) || (*t <= -LOG_BOUND && *g < 0.0) {
                0.0
            } else {
                *g
            }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn ascend(
    training: &TrainingSet,
    start: Vec<f64>,
    config: &TrainingConfig,
) -> Option<(TrainedGP, RestartOutcome)> {
    let mut theta: Vec<f64> = start
        .iter()
        .map(|t| t.clamp(-LOG_BOUND, LOG_BOUND))
        .collect();
    let (mut gp, mut lml, mut grad) = evaluate(training, &theta)?;
    let mut pgrad = projected(&theta, &grad);
    let mut step = 0.1 / norm(&pgrad).max(1.0);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    let mut converged = norm(&pgrad) <= config.gradient_tolerance;

    while !converged && iterations < config.max_iterations {
        iterations += 1;
        if let Some((pt, pg)) = &prev {
            let s: Vec<f64> = theta.iter().zip(pt).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            // Ascent on a locally concave objective has sᵀy < 0.
            step = if sy < 0.0 { ss / -sy } else { step * 2.0 };
        }
        let gnorm = norm(&pgrad);
        // Cap the proposal at two log-units per iteration.
        step = step.min(2.0 / gnorm).max(1e-12);

        let mut accepted = None;
        let mut trial_step = step;
        for _ in 0..50 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&pgrad)
                .map(|(t, g)| (t + trial_step * g).clamp(-LOG_BOUND, LOG_BOUND))
                .collect();
            let ascent: f64 = cand
                .iter()
                .zip(&theta)
                .zip(&pgrad)
                .map(|((c, t), g)| (c - t) * g)
                .sum();
            if let Some((cgp, clml, cgrad)) = evaluate(training, &cand) {
                if clml >= lml + 1e-4 * ascent {
                    accepted = Some((cand, cgp, clml, cgrad));
                    break;
                }
            }
            trial_step *= 0.5;
        }
        let Some((cand, cgp, clml, cgrad)) = accepted else {
            break;
        };
        prev = Some((
            std::mem::replace(&mut theta, cand),
            std::mem::replace(&mut grad, cgrad),
        ));
        step = trial_step;
        gp = cgp;
        let gained = clml - lml;
        lml = clml;
        pgrad = projected(&theta, &grad);
        let gn = norm(&pgrad);
        converged = gn <= config.gradient_tolerance;
        if !converged
            && gained.abs() <= 1e-14 * lml.abs().max(1.0)
            && gn <= 1e3 * config.gradient_tolerance
        {
            // Likelihood flat to machine precision; further steps cannot be measured.
            break;
        }
    }
    let gradient_norm = norm(&pgrad);
    let params = gp.params().clone();
    Some((
        gp,
        RestartOutcome {
            log_likelihood: lml,
            iterations,
            gradient_norm,
            converged,
            params: Some(params),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn fd_gradient(training: &TrainingSet, theta: &[f64], h: f64) -> Vec<f64> {
        (0..theta.len())
            .map(|k| {
                let mut p = theta.to_vec();
                let mut m = theta.to_vec();
                p[k] += h;
                m[k] -= h;
                let fp = TrainedGP::fit(training.clone(), KernelParams::from_log(&p))
                    .unwrap()
                    .log_marginal_likelihood();
                let fm = TrainedGP::fit(training.clone(), KernelParams::from_log(&m))
                    .unwrap()
                    .log_marginal_likelihood();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let xs =
            DMatrix::from_row_slice(5, 2, &[0.0, 0.1, 0.5, -0.3, 1.2, 0.8, -0.7, 0.4, 0.3, 1.1]);
        let ys = DVector::from_column_slice(&[0.2, -0.4, 1.1, 0.5, 0.0]);
        let t = TrainingSet::new(xs, ys).unwrap();
        let theta = vec![0.3f64, -0.2, 0.4, -2.0];
        let gp = TrainedGP::fit(t.clone(), KernelParams::from_log(&theta)).unwrap();
        let g = gp.lml_gradient();
        let fd = fd_gradient(&t, &theta, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn noise_component_matches_closed_form() {
        let xs = DMatrix::from_column_slice(4, 1, &[0.0, 0.5, 1.0, 1.5]);
        let ys = DVector::from_iterator(4, [0.0, 0.5, 1.0, 1.5].iter().map(|x: &f64| x.sin()));
        let t = TrainingSet::new(xs, ys).unwrap();
        let gp = TrainedGP::fit(t, KernelParams::new(1.0, vec![1.0], 1e-6).unwrap()).unwrap();
        let kinv = gp.covariance().try_inverse().unwrap();
        let closed = 0.5 * 1e-6 * (gp.alpha().norm_squared() - kinv.trace());
        let g = gp.lml_gradient();
        assert!(
            (g[2] - closed).abs() <= 1e-8 * closed.abs().max(1e-12),
            "{} vs {closed}",
            g[2]
        );
        assert!(g[2].is_finite());
    }

    #[test]
    fn rejects_zero_restarts_and_zero_noise() {
        let t = TrainingSet::new(
            DMatrix::from_column_slice(1, 1, &[0.0]),
            DVector::from_column_slice(&[1.0]),
        )
        .unwrap();
        let p = KernelParams::new(1.0, vec![1.0], 0.1).unwrap();
        assert!(train_hyperparameters(&t, &p, 0, 0, &TrainingConfig::default()).is_err());
        let p0 = KernelParams::new(1.0, vec![1.0], 0.0).unwrap();
        assert!(train_hyperparameters(&t, &p0, 1, 0, &TrainingConfig::default()).is_err());
    }
}
