//! Weighted k-means with k-means++ seeding.
//!
//! Unweighted callers pass `None` for the weights. The weighted form is what
//! the server side of federated k-means runs on the reported cluster centers.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centers: Array2<f64>,
    pub labels: Vec<usize>,
    /// Total weight assigned to each center.
    pub sizes: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn weight_at(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

fn check(data: &ArrayView2<'_, f64>, weights: Option<&[f64]>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if data.nrows() == 0 {
        return Err(Error::invalid("k-means needs at least one point"));
    }
    if let Some(w) = weights {
        if w.len() != data.nrows() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                actual: w.len(),
            });
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("k-means weights must be non-negative with positive sum"));
        }
    }
    Ok(())
}

/// k-means++ seeding: the first center is drawn proportional to weight, each
/// subsequent one proportional to `weight * D(x)^2`. When every point already
/// coincides with a center the draw falls back to weight alone, so duplicate
/// centers are possible when there are fewer distinct points than `k`.
pub fn plus_plus<R: Rng + ?Sized>(
    data: ArrayView2<'_, f64>,
    weights: Option<&[f64]>,
    k: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    check(&data, weights, k)?;
    let n = data.nrows();
    let base: Vec<f64> = (0..n).map(|i| weight_at(weights, i)).collect();
    let base_dist = WeightedIndex::new(&base).map_err(|e| Error::invalid(e.to_string()))?;

    let mut centers = Array2::zeros((k, data.ncols()));
    let first = base_dist.sample(rng);
    centers.row_mut(0).assign(&data.row(first));

    let mut min_d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(first))).collect();
    for c in 1..k {
        let scores: Vec<f64> = min_d2.iter().zip(&base).map(|(d, w)| d * w).collect();
        let total: f64 = scores.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            WeightedIndex::new(&scores)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(rng)
        } else {
            base_dist.sample(rng)
        };
        centers.row_mut(c).assign(&data.row(pick));
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = sq_dist(data.row(i), data.row(pick));
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(centers)
}

fn assign(data: &ArrayView2<'_, f64>, centers: &Array2<f64>, labels: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, row) in data.rows().into_iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.rows().into_iter().enumerate() {
            let d = sq_dist(row, center);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if labels[i] != best {
            labels[i] = best;
            changed = true;
        }
    }
    changed
}

/// Lloyd iterations from the given centers. A center that loses all its
/// points stays where it was.
pub fn lloyd(
    data: ArrayView2<'_, f64>,
    weights: Option<&[f64]>,
    mut centers: Array2<f64>,
    max_iters: usize,
) -> Result<KMeans> {
    check(&data, weights, centers.nrows())?;
    if centers.ncols() != data.ncols() {
        return Err(Error::DimensionMismatch {
            expected: data.ncols(),
            actual: centers.ncols(),
        });
    }
    let k = centers.nrows();
    let n = data.nrows();
    let mut labels = vec![usize::MAX; n];
    assign(&data, &centers, &mut labels);
    let mut iterations = 0;
    let mut sizes = vec![0.0; k];
    for _ in 0..max_iters {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        sizes.iter_mut().for_each(|s| *s = 0.0);
        for (i, row) in data.rows().into_iter().enumerate() {
            let w = weight_at(weights, i);
            let l = labels[i];
            sizes[l] += w;
            sums.row_mut(l).scaled_add(w, &row);
        }
        for (c, &s) in sizes.iter().enumerate() {
            if s > 0.0 {
                centers.row_mut(c).assign(&sums.row(c).mapv(|v| v / s));
            }
        }
        if !assign(&data, &centers, &mut labels) {
            break;
        }
    }
    sizes.iter_mut().for_each(|s| *s = 0.0);
    for (i, &l) in labels.iter().enumerate() {
        sizes[l] += weight_at(weights, i);
    }
    Ok(KMeans {
        centers,
        labels,
        sizes,
        iterations,
    })
}

pub fn kmeans<R: Rng + ?Sized>(
    data: ArrayView2<'_, f64>,
    weights: Option<&[f64]>,
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<KMeans> {
    let centers = plus_plus(data, weights, k, rng)?;
    lloyd(data, weights, centers, max_iters)
}

/// One-hot responsibilities from hard labels.
pub(crate) fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
    let mut resp = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        resp[[i, l]] = 1.0;
    }
    resp
}
