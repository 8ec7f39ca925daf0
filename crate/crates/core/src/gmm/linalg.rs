//! Small dense helpers for d x d covariance matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

/// Lower Cholesky factor, row-major `d*d`. `None` if not positive definite.
pub(crate) fn cholesky(a: ArrayView2<'_, f64>) -> Option<Vec<f64>> {
    let d = a.nrows();
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for p in 0..j {
                sum -= l[i * d + p] * l[j * d + p];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Squared norm of `L^{-1} v` by forward substitution.
pub(crate) fn forward_solve_sq_norm(l: &[f64], d: usize, v: &mut [f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        let mut s = v[i];
        for p in 0..i {
            s -= l[i * d + p] * v[p];
        }
        let y = s / l[i * d + i];
        v[i] = y;
        acc += y * y;
    }
    acc
}

pub(crate) fn to_dmatrix(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Symmetric eigen-decomposition with eigenvalues sorted descending.
/// Returns `(values, vectors)` with eigenvectors in the columns.
pub(crate) fn sym_eigen_desc(a: ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>) {
    let d = a.nrows();
    let eig = SymmetricEigen::new(to_dmatrix(a));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .partial_cmp(&eig.eigenvalues[x])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((d, d), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Projects a symmetric matrix onto `{S : S >= floor * I}` by raising every
/// eigenvalue below `floor` to `floor`. This is the constrained Gaussian MLE
/// for a sample covariance, so EM stays monotone under the constraint.
pub(crate) fn clip_eigenvalues(s: &mut Array2<f64>, floor: f64) {
    let d = s.nrows();
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (s[[i, j]] + s[[j, i]]);
            s[[i, j]] = m;
            s[[j, i]] = m;
        }
    }
    let eig = SymmetricEigen::new(to_dmatrix(s.view()));
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    for i in 0..d {
        for j in 0..=i {
            let mut acc = 0.0;
            for p in 0..d {
                acc += v[(i, p)] * clipped[p] * v[(j, p)];
            }
            s[[i, j]] = acc;
            s[[j, i]] = acc;
        }
    }
    // Rounding in the reconstruction can leave a diagonal a hair under the floor.
    for i in 0..d {
        if s[[i, i]] < floor {
            s[[i, i]] = floor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 3.0, 0.5], [0.4, 0.5, 1.0]];
        let l = cholesky(a.view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|p| l[i * 3 + p] * l[j * 3 + p]).sum();
                assert!((v - a[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_none());
    }

    #[test]
    fn clip_leaves_well_conditioned_matrix_alone() {
        let mut a = array![[2.0, 0.3], [0.3, 1.0]];
        let before = a.clone();
        clip_eigenvalues(&mut a, 1e-6);
        assert_eq!(a, before);
    }

    #[test]
    fn clip_lifts_singular_matrix() {
        let mut a = array![[1.0, 1.0], [1.0, 1.0]];
        clip_eigenvalues(&mut a, 0.01);
        let (vals, _) = sym_eigen_desc(a.view());
        assert!((vals[0] - 2.0).abs() < 1e-12);
        assert!((vals[1] - 0.01).abs() < 1e-12);
        assert!(cholesky(a.view()).is_some());
    }
}
