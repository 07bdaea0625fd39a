//! Independent reference computations shared by the integration and acceptance tests.

#![allow(dead_code)]

use gpmpc::gp::{KernelParams, NoiseMode, TrainedGP, TrainingSet};
use gpmpc::nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// A random regression problem with its hyperparameters.
#[derive(Debug, Clone)]
pub struct Instance {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub params: KernelParams,
}

impl Instance {
    pub fn fit(&self) -> TrainedGP {
        TrainedGP::fit(
            TrainingSet::from_rows(&self.rows, &self.targets).unwrap(),
            self.params.clone(),
        )
        .unwrap()
    }
}

pub fn random_instance(rng: &mut impl Rng, n: usize, d: usize) -> Instance {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let phase: f64 = rng.random_range(0.0..6.0);
    let targets = rows
        .iter()
        .map(|r| {
            r.iter().sum::<f64>().sin() + phase.cos() * r[0] + 0.1 * rng.random_range(-1.0..1.0)
        })
        .collect();
    let params = KernelParams {
        signal_variance: rng.random_range(0.5..2.0),
        lengthscales: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
        noise_variance: rng.random_range(1e-3..0.1),
    };
    Instance {
        rows,
        targets,
        params,
    }
}

pub fn se(a: &[f64], b: &[f64], p: &KernelParams) -> f64 {
    let q: f64 = a
        .iter()
        .zip(b)
        .zip(&p.lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    p.signal_variance * (-0.5 * q).exp()
}

fn gram(inst: &Instance) -> DMatrix<f64> {
    let n = inst.rows.len();
    DMatrix::from_fn(n, n, |i, j| {
        se(&inst.rows[i], &inst.rows[j], &inst.params)
            + if i == j {
                inst.params.noise_variance
            } else {
                0.0
            }
    })
}

/// Posterior mean and noise-inclusive variance through an explicit inverse.
pub fn dense_posterior(inst: &Instance, x: &[f64]) -> (f64, f64) {
    let kinv = gram(inst).try_inverse().expect("invertible");
    let k = DVector::from_iterator(
        inst.rows.len(),
        inst.rows.iter().map(|r| se(r, x, &inst.params)),
    );
    let y = DVector::from_column_slice(&inst.targets);
    let mean = (k.transpose() * &kinv * y)[0];
    let var =
        inst.params.signal_variance + inst.params.noise_variance - (k.transpose() * &kinv * &k)[0];
    (mean, var)
}

/// Log marginal likelihood through an explicit inverse and LU determinant.
pub fn dense_lml(inst: &Instance) -> f64 {
    let k = gram(inst);
    let y = DVector::from_column_slice(&inst.targets);
    let n = inst.rows.len() as f64;
    let quad = (y.transpose() * k.clone().try_inverse().unwrap() * &y)[0];
    -0.5 * quad - 0.5 * k.determinant().ln() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Central differences of the log marginal likelihood in log hyperparameter space,
/// ordered `(log sf², log l_1.., log sn²)`.
pub fn fd_lml_gradient(inst: &Instance, h: f64) -> Vec<f64> {
    let d = inst.params.lengthscales.len();
    let eval = |k: usize, delta: f64| {
        let mut p = inst.params.clone();
        let f = delta.exp();
        if k == 0 {
            p.signal_variance *= f;
        } else if k <= d {
            p.lengthscales[k - 1] *= f;
        } else {
            p.noise_variance *= f;
        }
        Instance {
            params: p,
            ..inst.clone()
        }
        .fit()
        .log_marginal_likelihood()
    };
    (0..d + 2)
        .map(|k| (eval(k, h) - eval(k, -h)) / (2.0 * h))
        .collect()
}

/// Monte Carlo of the exact predictive moments at a Gaussian input:
/// `E[m⁺(ζ)]`, `Var[m⁺(ζ)] + E[κ⁺(ζ)]` and the standard error of the mean estimate.
pub fn mc_uncertain(
    gp: &TrainedGP,
    mean: &[f64],
    chol: &DMatrix<f64>,
    samples: usize,
    rng: &mut impl Rng,
) -> (f64, f64, f64) {
    let d = mean.len();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut kv = 0.0;
    let mut z = DVector::zeros(d);
    let mut x = vec![0.0; d];
    for _ in 0..samples {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let off = chol * &z;
        for j in 0..d {
            x[j] = mean[j] + off[j];
        }
        let p = gp.predict_point(&x, NoiseMode::Include).unwrap();
        s1 += p.mean;
        s2 += p.mean * p.mean;
        kv += p.variance;
    }
    let n = samples as f64;
    let m = s1 / n;
    let var_m = (s2 / n - m * m).max(0.0) * n / (n - 1.0);
    (m, var_m + kv / n, (var_m / n).sqrt())
}

/// Relative error with an absolute floor for tiny reference values.
pub fn rel_err(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(floor)
}

/// Models for all three intentions trained on a few synthetic vehicles.
pub fn small_model_set(per_intention: usize, subset: usize, seed: u64) -> gpmpc::driver::ModelSet {
    use gpmpc::driver::{build_model, BuildConfig, Intention, ModelSet};
    use gpmpc::synth::{generate_set, GeneratorParams};
    let cfg = BuildConfig {
        subset_size: subset,
        restarts: 1,
        ..BuildConfig::default()
    };
    let models = Intention::ALL
        .iter()
        .map(|&i| {
            let trajs: Vec<_> = generate_set(i, per_intention, seed, &GeneratorParams::default())
                .unwrap()
                .into_iter()
                .map(|g| g.trajectory)
                .collect();
            build_model(i, &trajs, &cfg, seed).unwrap()
        })
        .collect();
    ModelSet::new(models).unwrap()
}

/// Straight-path OCP with one constant-velocity prediction per intention.
#[derive(Debug, Clone)]
pub struct OcpScenario {
    pub initial: gpmpc::mpc::EgoState,
    pub path: gpmpc::mpc::PathReference,
    /// Per intention: predicted means and the Euclidean norm of the axis standard deviations.
    pub predictions: Vec<(gpmpc::driver::Intention, Vec<[f64; 2]>, Vec<f64>)>,
}

impl OcpScenario {
    pub fn config() -> gpmpc::mpc::MpcConfig {
        gpmpc::mpc::MpcConfig {
            max_iterations: 30,
            ..gpmpc::mpc::MpcConfig::default()
        }
    }

    /// Problem with tightening `nu * sigma` for the listed intentions.
    pub fn problem(
        &self,
        nu: f64,
        intentions: &[gpmpc::driver::Intention],
    ) -> gpmpc::mpc::OcpProblem {
        use gpmpc::mpc::{DistanceConstraintSpec, OcpProblem};
        let targets = self
            .predictions
            .iter()
            .filter(|(i, _, _)| intentions.contains(i))
            .map(|(i, m, s)| {
                DistanceConstraintSpec::new(*i, m.clone(), s.iter().map(|v| nu * v).collect())
                    .unwrap()
            })
            .collect();
        OcpProblem::new(self.initial, self.path.clone(), Self::config(), targets).unwrap()
    }
}

pub fn random_ocp_scenario(rng: &mut impl Rng) -> OcpScenario {
    use gpmpc::driver::Intention;
    use gpmpc::mpc::{EgoState, PathReference};
    let cfg = OcpScenario::config();
    let len = cfg.horizon + cfg.terminal_lookahead + 1;
    let v0 = rng.random_range(5.0..11.0);
    let initial = EgoState {
        px: 1.75,
        py: -40.0,
        v: v0,
        psi: std::f64::consts::FRAC_PI_2,
        delta: 0.0,
        vs: v0,
        s: 0.0,
    };
    let path = PathReference::with_constant_speed(vec![[1.75, -40.0], [1.75, 60.0]], 10.0).unwrap();
    let predictions = Intention::ALL
        .iter()
        .map(|&i| {
            let p0 = [rng.random_range(4.0..30.0), rng.random_range(-24.0..-4.0)];
            let v = [rng.random_range(-9.0..0.0), rng.random_range(-2.0..2.0)];
            let growth = rng.random_range(0.05..0.3);
            let means = (0..len)
                .map(|j| {
                    let t = j as f64 * cfg.sampling_time;
                    [p0[0] + v[0] * t, p0[1] + v[1] * t]
                })
                .collect();
            let sigmas = (0..len)
                .map(|j| growth * j as f64 * cfg.sampling_time)
                .collect();
            (i, means, sigmas)
        })
        .collect();
    OcpScenario {
        initial,
        path,
        predictions,
    }
}

/// Chebyshev multiplier at ω = 0.01.
pub const NU: f64 = 10.0;

/// The first `count` random scenarios whose full-set problem at `NU` has an admissible solution.
pub fn admissible_ocp_scenarios(
    seed: u64,
    count: usize,
) -> Vec<(OcpScenario, gpmpc::mpc::OcpSolution)> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut tries = 0;
    while out.len() < count {
        tries += 1;
        assert!(
            tries <= 4 * count,
            "only {} of {tries} scenarios admissible",
            out.len()
        );
        let scn = random_ocp_scenario(&mut rng);
        let sol =
            gpmpc::mpc::solve_ocp(&scn.problem(NU, &gpmpc::driver::Intention::ALL), None).unwrap();
        if sol.is_admissible() {
            out.push((scn, sol));
        }
    }
    out
}
