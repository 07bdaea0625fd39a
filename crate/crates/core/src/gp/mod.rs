//! Scalar-output Gaussian process regression.
//!
//! A [`TrainedGP`] caches the Cholesky factor of `K + sn² I` and the weight
//! vector `alpha`, so posterior queries cost `O(n)` for the mean and `O(n²)`
//! for the variance. Inputs at which the query itself is Gaussian-distributed
//! are handled by linearizing the posterior mean around the input mean.

mod kernel;
mod train;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kernel::{kernel_eval, KernelParams};
pub use train::{train_hyperparameters, RestartOutcome, TrainingConfig, TrainingOutcome};

pub(crate) use kernel::{scaled_sq_dist, se};

/// Covariance jitter relative to the signal variance, used once if factorization fails.
pub const JITTER_FACTOR: f64 = 1e-10;

pub const GP_FORMAT_VERSION: u32 = 1;

/// Training inputs (`n × d`) and scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
}

impl TrainingSet {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Usage("training set needs at least one row".into()));
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::Dimension {
                expected: inputs.nrows(),
                got: targets.len(),
            });
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data(
                "training set contains non-finite values".into(),
            ));
        }
        Ok(Self { inputs, targets })
    }

    /// Builds a training set from row slices.
    pub fn from_rows(rows: &[Vec<f64>], targets: &[f64]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: r.len(),
            });
        }
        let inputs = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(inputs, DVector::from_column_slice(targets))
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    fn duplicate_rows(&self) -> Option<(usize, usize)> {
        let n = self.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.inputs.row(i) == self.inputs.row(j) {
                    return Some((i, j));
                }
            }
        }
        None
    }
}

/// Gaussian-distributed test input.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianInput {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianInput {
    /// Validates symmetry and clamps slightly negative eigenvalues to zero.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: covariance.nrows(),
            });
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::Usage(format!(
                "input covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let eig = SymmetricEigen::new(covariance.clone());
        let min_eig = eig.eigenvalues.min();
        if min_eig < -1e-12 {
            return Err(Error::Usage(format!(
                "input covariance is not PSD (eigenvalue {min_eig:e})"
            )));
        }
        let covariance = if min_eig < 0.0 {
            let clamped = eig.eigenvalues.map(|e| e.max(0.0));
            &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
        } else {
            covariance
        };
        Ok(Self { mean, covariance })
    }

    /// A point input with zero covariance.
    pub fn deterministic(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Self {
            mean,
            covariance: DMatrix::zeros(d, d),
        }
    }
}

/// Mean and variance of a Gaussian predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub variance: f64,
}

/// Posterior marginals at a batch of test inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub means: DVector<f64>,
    pub variances: DVector<f64>,
}

/// Whether predictive variances include the observation noise term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    #[default]
    Include,
    Exclude,
}

/// A fitted GP. Immutable after construction apart from the clamp counter.
#[derive(Debug)]
pub struct TrainedGP {
    training: TrainingSet,
    params: KernelParams,
    prior_mean: f64,
    chol_factor: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    // Row-major copies for the single-point hot path.
    rows: Vec<f64>,
    l_packed: Vec<f64>,
    inv_sq_ls: Vec<f64>,
    clamp_events: AtomicU64,
}

impl Clone for TrainedGP {
    fn clone(&self) -> Self {
        Self {
            training: self.training.clone(),
            params: self.params.clone(),
            prior_mean: self.prior_mean,
            chol_factor: self.chol_factor.clone(),
            alpha: self.alpha.clone(),
            jitter: self.jitter,
            rows: self.rows.clone(),
            l_packed: self.l_packed.clone(),
            inv_sq_ls: self.inv_sq_ls.clone(),
            clamp_events: AtomicU64::new(self.clamp_events.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for TrainedGP {
    fn eq(&self, other: &Self) -> bool {
        self.training == other.training
            && self.params == other.params
            && self.prior_mean == other.prior_mean
    }
}

fn covariance_matrix(training: &TrainingSet, params: &KernelParams) -> DMatrix<f64> {
    let n = training.len();
    let inv = params.inv_sq_lengthscales();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| training.inputs.row(i).iter().copied().collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.signal_variance;
        for j in 0..i {
            let v = se(&rows[i], &rows[j], &inv, params.signal_variance);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

impl TrainedGP {
    /// Factorizes `K(Z, Z) + sn² I` with a zero prior mean.
    pub fn fit(training: TrainingSet, params: KernelParams) -> Result<Self> {
        Self::fit_with_prior_mean(training, params, 0.0)
    }

    pub fn fit_with_prior_mean(
        training: TrainingSet,
        params: KernelParams,
        prior_mean: f64,
    ) -> Result<Self> {
        params.validate()?;
        if training.dim() != params.dim() {
            return Err(Error::Dimension {
                expected: params.dim(),
                got: training.dim(),
            });
        }
        if params.noise_variance == 0.0 {
            if let Some((i, j)) = training.duplicate_rows() {
                return Err(Error::SingularModel(i, j));
            }
        }
        let n = training.len();
        let mut k = covariance_matrix(&training, &params);
        for i in 0..n {
            k[(i, i)] += params.noise_variance;
        }
        let mut jitter = 0.0;
        let chol = match k.clone().cholesky() {
            Some(c) => c,
            None => {
                jitter = JITTER_FACTOR * params.signal_variance;
                for i in 0..n {
                    k[(i, i)] += jitter;
                }
                match k.cholesky() {
                    Some(c) => {
                        log::debug!("covariance factorization needed jitter {jitter:e}");
                        c
                    }
                    None => {
                        let (i, j) = closest_pair(&training, &params);
                        return Err(Error::SingularModel(i, j));
                    }
                }
            }
        };
        let centered = training.targets.map(|t| t - prior_mean);
        let alpha = chol.solve(&centered);
        let chol_factor = chol.unpack();

        let d = training.dim();
        let mut rows = Vec::with_capacity(n * d);
        for i in 0..n {
            rows.extend(training.inputs.row(i).iter());
        }
        let mut l_packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                l_packed.push(chol_factor[(i, j)]);
            }
        }
        let inv_sq_ls = params.inv_sq_lengthscales();
        Ok(Self {
            training,
            params,
            prior_mean,
            chol_factor,
            alpha,
            jitter,
            rows,
            l_packed,
            inv_sq_ls,
            clamp_events: AtomicU64::new(0),
        })
    }

    pub fn training_set(&self) -> &TrainingSet {
        &self.training
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol_factor
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Diagonal jitter that had to be added to factorize, zero if none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Number of predictive variances that came out negative and were clamped to zero.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn len(&self) -> usize {
        self.training.len()
    }

    pub fn is_empty(&self) -> bool {
        self.training.is_empty()
    }

    /// The factorized matrix `K + (sn² + jitter) I`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut k = covariance_matrix(&self.training, &self.params);
        for i in 0..self.len() {
            k[(i, i)] += self.params.noise_variance + self.jitter;
        }
        k
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.rows[i * d..(i + 1) * d]
    }

    fn clamp_variance(&self, v: f64) -> f64 {
        if v < 0.0 {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
            0.0
        } else {
            v
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("test input contains non-finite values".into()));
        }
        Ok(())
    }

    fn cross_kernel(&self, x: &[f64], out: &mut [f64]) {
        let sv = self.params.signal_variance;
        for (i, o) in out.iter_mut().enumerate() {
            *o = se(x, self.row(i), &self.inv_sq_ls, sv);
        }
    }

    /// `‖L⁻¹ k‖²` by forward substitution on the packed factor.
    fn explained_variance(&self, k: &mut [f64]) -> f64 {
        let n = self.len();
        let mut acc = 0.0;
        let mut offset = 0;
        for i in 0..n {
            let row = &self.l_packed[offset..offset + i + 1];
            let mut s = k[i];
            for (l, v) in row[..i].iter().zip(&k[..i]) {
                s -= l * v;
            }
            let vi = s / row[i];
            k[i] = vi;
            acc += vi * vi;
            offset += i + 1;
        }
        acc
    }

    fn point_moments(
        &self,
        x: &[f64],
        mode: NoiseMode,
        want_gradient: bool,
    ) -> (f64, f64, Vec<f64>) {
        let n = self.len();
        let d = self.dim();
        let mut k = vec![0.0; n];
        self.cross_kernel(x, &mut k);
        let mut mean = self.prior_mean;
        let mut grad = vec![0.0; if want_gradient { d } else { 0 }];
        for i in 0..n {
            let w = self.alpha[i] * k[i];
            mean += w;
            if want_gradient {
                let zi = self.row(i);
                for j in 0..d {
                    grad[j] -= w * (x[j] - zi[j]) * self.inv_sq_ls[j];
                }
            }
        }
        let prior_var = self.params.signal_variance
            + match mode {
                NoiseMode::Include => self.params.noise_variance,
                NoiseMode::Exclude => 0.0,
            };
        let var = prior_var - self.explained_variance(&mut k);
        (mean, var, grad)
    }

    /// Posterior mean and variance at a single point.
    pub fn predict_point(&self, x: &[f64], mode: NoiseMode) -> Result<GaussianPrediction> {
        self.check_point(x)?;
        let (mean, var, _) = self.point_moments(x, mode, false);
        Ok(GaussianPrediction {
            mean,
            variance: self.clamp_variance(var),
        })
    }

    /// Posterior marginals at each row of `test`, noise included.
    pub fn posterior(&self, test: &DMatrix<f64>) -> Result<Posterior> {
        self.posterior_with(test, NoiseMode::Include)
    }

    pub fn posterior_with(&self, test: &DMatrix<f64>, mode: NoiseMode) -> Result<Posterior> {
        if test.ncols() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: test.ncols(),
            });
        }
        let m = test.nrows();
        let mut means = DVector::zeros(m);
        let mut variances = DVector::zeros(m);
        let mut x = vec![0.0; self.dim()];
        for r in 0..m {
            for (j, v) in x.iter_mut().enumerate() {
                *v = test[(r, j)];
            }
            let p = self.predict_point(&x, mode)?;
            means[r] = p.mean;
            variances[r] = p.variance;
        }
        Ok(Posterior { means, variances })
    }

    /// `-½ y₀ᵀ K⁻¹ y₀ - ½ log|K| - (n/2) log 2π`, with the determinant from the factor.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let centered = self.training.targets.map(|t| t - self.prior_mean);
        let quad = centered.dot(&self.alpha);
        let log_det = 2.0
            * self
                .chol_factor
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        -0.5 * quad - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Gradient of the posterior mean with respect to the test input.
    pub fn posterior_mean_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.point_moments(x, NoiseMode::Include, true).2)
    }

    /// Prediction at a Gaussian input via posterior linearization:
    /// mean `m⁺(μ)`, variance `κ⁺(μ) + ∇m⁺(μ)ᵀ Σ ∇m⁺(μ)`.
    pub fn predict_uncertain(&self, input: &GaussianInput) -> Result<GaussianPrediction> {
        self.predict_uncertain_with(input, NoiseMode::Include)
    }

    pub fn predict_uncertain_with(
        &self,
        input: &GaussianInput,
        mode: NoiseMode,
    ) -> Result<GaussianPrediction> {
        let x: Vec<f64> = input.mean.iter().copied().collect();
        self.check_point(&x)?;
        if input.covariance.nrows() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: input.covariance.nrows(),
            });
        }
        let (mean, var, grad) = self.point_moments(&x, mode, true);
        let var = self.clamp_variance(var);
        let d = self.dim();
        let mut inflation = 0.0;
        for a in 0..d {
            for b in 0..d {
                inflation += grad[a] * input.covariance[(a, b)] * grad[b];
            }
        }
        Ok(GaussianPrediction {
            mean,
            variance: var + inflation.max(0.0),
        })
    }

    /// Fast path for 2-D inputs, used by rollouts.
    pub(crate) fn predict_uncertain_2d(
        &self,
        mean: [f64; 2],
        cov: [[f64; 2]; 2],
    ) -> GaussianPrediction {
        let (m, v, g) = self.point_moments(&mean, NoiseMode::Include, true);
        let v = self.clamp_variance(v);
        let inflation =
            g[0] * g[0] * cov[0][0] + 2.0 * g[0] * g[1] * cov[0][1] + g[1] * g[1] * cov[1][1];
        GaussianPrediction {
            mean: m,
            variance: v + inflation.max(0.0),
        }
    }

    pub fn to_document(&self) -> GpDocument {
        let n = self.len();
        GpDocument {
            format: "gpmpc-gp".into(),
            format_version: GP_FORMAT_VERSION,
            kernel: "squared_exponential_ard".into(),
            signal_variance: self.params.signal_variance,
            lengthscales: self.params.lengthscales.clone(),
            noise_variance: self.params.noise_variance,
            prior_mean: self.prior_mean,
            inputs: (0..n).map(|i| self.row(i).to_vec()).collect(),
            targets: self.training.targets.iter().copied().collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    /// Rebuilds a model from its JSON document; the factorization is recomputed.
    pub fn from_json(json: &str) -> Result<Self> {
        let doc: GpDocument = serde_json::from_str(json)?;
        doc.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Self-describing serialized form of a [`TrainedGP`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpDocument {
    pub format: String,
    pub format_version: u32,
    pub kernel: String,
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
    pub prior_mean: f64,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl GpDocument {
    pub fn into_model(self) -> Result<TrainedGP> {
        if self.format != "gpmpc-gp" {
            return Err(Error::Data(format!(
                "unexpected document format '{}'",
                self.format
            )));
        }
        if self.format_version != GP_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported GP format version {} (expected {GP_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.kernel != "squared_exponential_ard" {
            return Err(Error::Data(format!("unsupported kernel '{}'", self.kernel)));
        }
        let params =
            KernelParams::new(self.signal_variance, self.lengthscales, self.noise_variance)?;
        let training = TrainingSet::from_rows(&self.inputs, &self.targets)?;
        TrainedGP::fit_with_prior_mean(training, params, self.prior_mean)
    }
}

fn closest_pair(training: &TrainingSet, params: &KernelParams) -> (usize, usize) {
    let inv = params.inv_sq_lengthscales();
    let n = training.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| training.inputs.row(i).iter().copied().collect())
        .collect();
    let mut best = (0, 0, f64::INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = scaled_sq_dist(&rows[i], &rows[j], &inv);
            if d < best.2 {
                best = (i, j, d);
            }
        }
    }
    (best.0, best.1)
}
