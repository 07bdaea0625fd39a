//! Squared-exponential covariance with per-dimension lengthscales.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the squared-exponential kernel plus the observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let params = Self {
            signal_variance,
            lengthscales,
            noise_variance,
        };
        params.validate()?;
        Ok(params)
    }

    /// Isotropic parameters for a `dim`-dimensional input.
    pub fn isotropic(
        signal_variance: f64,
        lengthscale: f64,
        noise_variance: f64,
        dim: usize,
    ) -> Result<Self> {
        Self::new(signal_variance, vec![lengthscale; dim], noise_variance)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(Error::Usage(format!(
                "signal variance must be positive and finite, got {}",
                self.signal_variance
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::Usage("at least one lengthscale is required".into()));
        }
        if let Some(l) = self
            .lengthscales
            .iter()
            .find(|l| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::Usage(format!(
                "lengthscales must be positive and finite, got {l}"
            )));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::Usage(format!(
                "noise variance must be non-negative and finite, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    /// Log-space parameter vector `(log sf², log l_1..log l_d, log sn²)`.
    ///
    /// A zero noise variance maps to `-inf`.
    pub fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 2);
        v.push(self.signal_variance.ln());
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v.push(self.noise_variance.ln());
        v
    }

    pub fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 2;
        Self {
            signal_variance: theta[0].exp(),
            lengthscales: theta[1..=d].iter().map(|t| t.exp()).collect(),
            noise_variance: theta[d + 1].exp(),
        }
    }

    pub(crate) fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.lengthscales.iter().map(|l| 1.0 / (l * l)).collect()
    }
}

/// Evaluates `sf² · exp(-½ Σ_j ((a_j - b_j) / l_j)²)`.
pub fn kernel_eval(a: &[f64], b: &[f64], params: &KernelParams) -> Result<f64> {
    let d = params.dim();
    if a.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: a.len(),
        });
    }
    if b.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: b.len(),
        });
    }
    let inv = params.inv_sq_lengthscales();
    Ok(se(a, b, &inv, params.signal_variance))
}

#[inline]
pub(crate) fn scaled_sq_dist(a: &[f64], b: &[f64], inv_sq_ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_sq_ls)
        .map(|((x, y), w)| {
            let diff = x - y;
            diff * diff * w
        })
        .sum()
}

#[inline]
pub(crate) fn se(a: &[f64], b: &[f64], inv_sq_ls: &[f64], signal_variance: f64) -> f64 {
    signal_variance * (-0.5 * scaled_sq_dist(a, b, inv_sq_ls)).exp()
}
