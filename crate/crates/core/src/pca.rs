//! Principal component analysis for feature reduction.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::gmm::linalg::sym_eigen_desc;
use crate::partition::min_max_normalize;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `d x t`, one unit-length principal direction per column.
    pub components: Array2<f64>,
    /// Sample variance (divisor `n - 1`) along each component.
    pub explained_variance: Vec<f64>,
}

impl Pca {
    /// Top `target_dims` eigenvectors of the sample covariance. Each
    /// component is sign-fixed so that its largest-magnitude loading is
    /// non-negative.
    pub fn fit(data: ArrayView2<'_, f64>, target_dims: usize) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid("PCA needs a non-empty matrix"));
        }
        if target_dims < 1 || target_dims > d {
            return Err(Error::invalid(format!(
                "target_dims must lie in [1, {d}], got {target_dims}"
            )));
        }
        let mean = data.mean_axis(Axis(0)).expect("n > 0");
        let centered = &data - &mean;
        let cov = centered.t().dot(&centered) / (n.max(2) - 1) as f64;
        let (values, vectors) = sym_eigen_desc(cov.view());
        let mut components = vectors.slice(ndarray::s![.., ..target_dims]).to_owned();
        for mut col in components.columns_mut() {
            let lead = col
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (i, &v)| if v.abs() > best.1.abs() { (i, v) } else { best });
            if lead.1 < 0.0 {
                col.mapv_inplace(|v| -v);
            }
        }
        Ok(Self {
            mean,
            components,
            explained_variance: values[..target_dims].iter().map(|v| v.max(0.0)).collect(),
        })
    }

    /// Centered projection onto the components, without renormalization.
    pub fn project(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: data.ncols(),
            });
        }
        Ok((&data - &self.mean).dot(&self.components))
    }
}

/// Projects onto the top `target_dims` principal components and min-max
/// normalizes the result to `[0, 1]`.
pub fn pca_reduce(data: ArrayView2<'_, f64>, target_dims: usize) -> Result<Array2<f64>> {
    let pca = Pca::fit(data, target_dims)?;
    let mut out = pca.project(data)?;
    min_max_normalize(&mut out);
    Ok(out)
}
