//! Gaussian mixture primitives: density evaluation, EM fitting with k-means
//! initialization, BIC model selection and sampling.

mod density;
mod em;
pub mod kmeans;
pub(crate) mod linalg;
mod sample;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use density::{log_pdf, log_pdf_rows, logsumexp};
pub use em::{bic, e_step, fit_em, m_step, run_em, train_gmm};
pub use sample::sample;

pub(crate) use density::Evaluator;
pub(crate) use em::{bic_value, e_step_rows as em_rows, finalize_covariance};

/// Default lower bound on component variances.
pub const DEFAULT_REG_FLOOR: f64 = 1e-6;
/// Default EM stopping tolerance on the per-point average log-likelihood.
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITERS: usize = 100;

/// Tolerance used when validating that mixture weights sum to one.
const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceType {
    #[default]
    Diagonal,
    Full,
}

impl CovarianceType {
    /// Free covariance parameters per component in dimension `d`.
    pub fn params_per_component(self, d: usize) -> usize {
        match self {
            CovarianceType::Diagonal => d,
            CovarianceType::Full => d * (d + 1) / 2,
        }
    }
}

impl std::fmt::Display for CovarianceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovarianceType::Diagonal => f.write_str("diagonal"),
            CovarianceType::Full => f.write_str("full"),
        }
    }
}

impl std::str::FromStr for CovarianceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" | "diag" => Ok(CovarianceType::Diagonal),
            "full" => Ok(CovarianceType::Full),
            other => Err(Error::invalid(format!("unknown covariance type `{other}`"))),
        }
    }
}

/// Per-component covariances.
///
/// `Diagonal` is `K x d` (one variance per feature), `Full` is `K x d x d`.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariances {
    Diagonal(Array2<f64>),
    Full(Array3<f64>),
}

impl Covariances {
    pub fn cov_type(&self) -> CovarianceType {
        match self {
            Covariances::Diagonal(_) => CovarianceType::Diagonal,
            Covariances::Full(_) => CovarianceType::Full,
        }
    }

    fn k(&self) -> usize {
        match self {
            Covariances::Diagonal(v) => v.nrows(),
            Covariances::Full(m) => m.len_of(Axis(0)),
        }
    }

    /// Diagonal entries of component `k`'s covariance.
    pub fn diagonal(&self, k: usize) -> Array1<f64> {
        match self {
            Covariances::Diagonal(v) => v.row(k).to_owned(),
            Covariances::Full(m) => m.index_axis(Axis(0), k).diag().to_owned(),
        }
    }
}

/// Parameters of a K-component Gaussian mixture in d dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Array1<f64>,
    means: Array2<f64>,
    covariances: Covariances,
}

impl GmmParams {
    /// Validates shapes, weights and positive-definiteness. Weights must sum
    /// to one within 1e-6 and are renormalized exactly.
    pub fn new(weights: Array1<f64>, means: Array2<f64>, covariances: Covariances) -> Result<Self> {
        let k = weights.len();
        let d = means.ncols();
        if k == 0 || d == 0 {
            return Err(Error::invalid("a mixture needs K >= 1 and d >= 1"));
        }
        if means.nrows() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: means.nrows(),
            });
        }
        if covariances.k() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: covariances.k(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("mixture weights must be finite and non-negative"));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("component means must be finite"));
        }
        match &covariances {
            Covariances::Diagonal(v) => {
                if v.ncols() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: v.ncols(),
                    });
                }
                if v.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                    return Err(Error::invalid("diagonal variances must be positive"));
                }
            }
            Covariances::Full(m) => {
                let shape = m.shape();
                if shape[1] != d || shape[2] != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: if shape[1] != d { shape[1] } else { shape[2] },
                    });
                }
                for (idx, cov) in m.outer_iter().enumerate() {
                    let scale = cov.diag().iter().fold(0.0f64, |a, b| a.max(b.abs()));
                    for i in 0..d {
                        for j in 0..i {
                            if (cov[[i, j]] - cov[[j, i]]).abs() > 1e-9 * scale.max(1.0) {
                                return Err(Error::invalid(format!(
                                    "covariance {idx} is not symmetric"
                                )));
                            }
                        }
                    }
                    if linalg::cholesky(cov).is_none() {
                        return Err(Error::invalid(format!(
                            "covariance {idx} is not positive definite"
                        )));
                    }
                }
            }
        }
        Ok(Self::from_parts_unchecked(weights / total, means, covariances))
    }

    pub(crate) fn from_parts_unchecked(
        weights: Array1<f64>,
        means: Array2<f64>,
        covariances: Covariances,
    ) -> Self {
        Self {
            weights,
            means,
            covariances,
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn cov_type(&self) -> CovarianceType {
        self.covariances.cov_type()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn means(&self) -> ArrayView2<'_, f64> {
        self.means.view()
    }

    pub fn covariances(&self) -> &Covariances {
        &self.covariances
    }

    /// Number of free parameters: `(K-1) + K*d + K*cov_params(d)`.
    pub fn n_free_params(&self) -> usize {
        let (k, d) = (self.k(), self.dim());
        (k - 1) + k * d + k * self.cov_type().params_per_component(d)
    }

    /// Number of scalars needed to transmit the parameters (weights, means,
    /// unique covariance entries).
    pub fn n_transmitted_floats(&self) -> usize {
        self.n_free_params() + 1
    }

    /// Drops components whose weight is exactly zero and renormalizes.
    pub fn without_zero_weight_components(&self) -> Result<Self> {
        let keep: Vec<usize> = (0..self.k()).filter(|&i| self.weights[i] > 0.0).collect();
        if keep.is_empty() {
            return Err(Error::invalid("every component has zero weight"));
        }
        if keep.len() == self.k() {
            return Ok(self.clone());
        }
        let weights = self.weights.select(Axis(0), &keep);
        let means = self.means.select(Axis(0), &keep);
        let covariances = match &self.covariances {
            Covariances::Diagonal(v) => Covariances::Diagonal(v.select(Axis(0), &keep)),
            Covariances::Full(m) => Covariances::Full(m.select(Axis(0), &keep)),
        };
        let total = weights.sum();
        Ok(Self::from_parts_unchecked(weights / total, means, covariances))
    }
}

/// Settings for EM fitting and the BIC sweep over `[k_min, k_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub cov_type: CovarianceType,
    /// Stop when the per-point average log-likelihood changes by less than this.
    pub tol: f64,
    pub max_iters: usize,
    pub reg_floor: f64,
    pub n_init: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_min: 1,
            k_max: 1,
            cov_type: CovarianceType::Diagonal,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            reg_floor: DEFAULT_REG_FLOOR,
            n_init: 1,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn fixed_k(k: usize) -> Self {
        Self {
            k_min: k,
            k_max: k,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(Error::invalid(format!(
                "need 1 <= k_min <= k_max, got [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        self.validate_em()
    }

    /// Checks everything except the k range.
    pub(crate) fn validate_em(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.reg_floor > 0.0) {
            return Err(Error::invalid("reg_floor must be positive"));
        }
        if self.n_init < 1 {
            return Err(Error::invalid("n_init must be at least 1"));
        }
        Ok(())
    }
}

/// Diagnostics of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_avg_loglik: f64,
    /// Number of M-steps applied after initialization.
    pub n_iters: usize,
    pub bic: f64,
    pub selected_k: usize,
    pub converged: bool,
    /// Average log-likelihood of the initial model followed by the value after
    /// each M-step.
    pub loglik_trace: Vec<f64>,
}

pub(crate) fn check_data(data: &ArrayView2<'_, f64>) -> Result<()> {
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(Error::invalid("data must have at least one row and column"));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("data contains non-finite values"));
    }
    Ok(())
}
