use ndarray::{Array2, Axis};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand_distr::StandardNormal;

use super::{linalg, Covariances, GmmParams};
use crate::error::{Error, Result};
use crate::seed;

/// Draws `n` rows: a component index from the weights, then a Gaussian draw
/// from that component. Deterministic in `seed`.
pub fn sample(model: &GmmParams, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let d = model.dim();
    let picker = WeightedIndex::new(model.weights().iter().copied())
        .map_err(|e| Error::invalid(format!("cannot sample from weights: {e}")))?;

    // Square roots of the variances, or Cholesky factors.
    let scales: Vec<Vec<f64>> = match model.covariances() {
        Covariances::Diagonal(v) => v.rows().into_iter().map(|r| r.mapv(f64::sqrt).to_vec()).collect(),
        Covariances::Full(m) => m
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(k, c)| {
                linalg::cholesky(c).ok_or_else(|| {
                    Error::Numerical(format!("covariance {k} is not positive definite"))
                })
            })
            .collect::<Result<_>>()?,
    };
    let full = matches!(model.covariances(), Covariances::Full(_));

    let means = model.means();
    let mut rng = seed::rng(seed);
    let mut out = Array2::zeros((n, d));
    let mut z = vec![0.0; d];
    for mut row in out.rows_mut() {
        let k = picker.sample(&mut rng);
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(&mut rng);
        }
        let mean = means.row(k);
        let s = &scales[k];
        if full {
            for i in 0..d {
                let mut acc = mean[i];
                for p in 0..=i {
                    acc += s[i * d + p] * z[p];
                }
                row[i] = acc;
            }
        } else {
            for i in 0..d {
                row[i] = mean[i] + s[i] * z[i];
            }
        }
    }
    Ok(out)
}
