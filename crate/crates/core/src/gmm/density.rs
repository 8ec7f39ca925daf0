use std::f64::consts::PI;

use ndarray::{Array1, ArrayView2};

use super::{linalg, Covariances, GmmParams};
use crate::error::{Error, Result};

/// `ln(sum(exp(v)))` with the max shifted out. Empty input or all `-inf`
/// gives `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

enum Component {
    Diagonal {
        inv_var: Vec<f64>,
    },
    Full {
        chol: Vec<f64>,
    },
}

/// Pre-factorized mixture for repeated evaluation: per component it holds
/// `ln w_k - 0.5 (d ln 2pi + ln|Sigma_k|)` and the precision (diagonal) or
/// Cholesky factor (full).
pub(crate) struct Evaluator<'a> {
    means: ArrayView2<'a, f64>,
    log_consts: Vec<f64>,
    comps: Vec<Component>,
    d: usize,
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(model: &'a GmmParams) -> Result<Self> {
        let d = model.dim();
        let base = -0.5 * d as f64 * (2.0 * PI).ln();
        let mut log_consts = Vec::with_capacity(model.k());
        let mut comps = Vec::with_capacity(model.k());
        for k in 0..model.k() {
            let log_w = model.weights[k].ln();
            match &model.covariances {
                Covariances::Diagonal(v) => {
                    let row = v.row(k);
                    let log_det: f64 = row.iter().map(|x| x.ln()).sum();
                    log_consts.push(log_w + base - 0.5 * log_det);
                    comps.push(Component::Diagonal {
                        inv_var: row.iter().map(|x| 1.0 / x).collect(),
                    });
                }
                Covariances::Full(m) => {
                    let chol = linalg::cholesky(m.index_axis(ndarray::Axis(0), k))
                        .ok_or_else(|| {
                            Error::Numerical(format!("covariance {k} lost positive definiteness"))
                        })?;
                    let log_det: f64 = 2.0 * (0..d).map(|i| chol[i * d + i].ln()).sum::<f64>();
                    log_consts.push(log_w + base - 0.5 * log_det);
                    comps.push(Component::Full { chol });
                }
            }
        }
        Ok(Self {
            means: model.means.view(),
            log_consts,
            comps,
            d,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.d
    }

    /// Fills `out[k] = ln w_k + ln N(x | mu_k, Sigma_k)`.
    pub(crate) fn joint_log_densities(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        for (k, comp) in self.comps.iter().enumerate() {
            let mean = self.means.row(k);
            let maha = match comp {
                Component::Diagonal { inv_var } => {
                    let mut acc = 0.0;
                    for j in 0..self.d {
                        let diff = x[j] - mean[j];
                        acc += diff * diff * inv_var[j];
                    }
                    acc
                }
                Component::Full { chol } => {
                    for j in 0..self.d {
                        scratch[j] = x[j] - mean[j];
                    }
                    linalg::forward_solve_sq_norm(chol, self.d, scratch)
                }
            };
            out[k] = self.log_consts[k] - 0.5 * maha;
        }
    }

    pub(crate) fn log_pdf_with(&self, x: &[f64], buf: &mut [f64], scratch: &mut [f64]) -> f64 {
        self.joint_log_densities(x, buf, scratch);
        logsumexp(buf)
    }

    pub(crate) fn buffers(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.comps.len()], vec![0.0; self.d])
    }
}

fn check_dim(model: &GmmParams, actual: usize) -> Result<()> {
    if actual != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual,
        });
    }
    Ok(())
}

/// Log density of the mixture at `x`, via log-sum-exp over components.
pub fn log_pdf(model: &GmmParams, x: &[f64]) -> Result<f64> {
    check_dim(model, x.len())?;
    let eval = Evaluator::new(model)?;
    let (mut buf, mut scratch) = eval.buffers();
    Ok(eval.log_pdf_with(x, &mut buf, &mut scratch))
}

/// Log density of every row of `data`.
pub fn log_pdf_rows(model: &GmmParams, data: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    check_dim(model, data.ncols())?;
    let eval = Evaluator::new(model)?;
    let (mut buf, mut scratch) = eval.buffers();
    let mut row_buf = vec![0.0; eval.dim()];
    Ok(data
        .rows()
        .into_iter()
        .map(|row| {
            row_buf.iter_mut().zip(row.iter()).for_each(|(dst, src)| *dst = *src);
            eval.log_pdf_with(&row_buf, &mut buf, &mut scratch)
        })
        .collect())
}
