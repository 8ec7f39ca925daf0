#![allow(dead_code)]

use fedgengmm::gmm::{Covariances, GmmParams};
use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rows drawn from isotropic Gaussians around `centers`, `counts[i]` per
/// center, in generation order. Independent of the crate's sampler.
pub fn blobs(centers: &[Vec<f64>], sd: f64, counts: &[usize], seed: u64) -> Array2<f64> {
    let d = centers[0].len();
    let n: usize = counts.iter().sum();
    let normal = Normal::new(0.0, sd).unwrap();
    let mut r = rng(seed);
    let mut out = Array2::zeros((n, d));
    let mut i = 0;
    for (c, &cnt) in centers.iter().zip(counts) {
        for _ in 0..cnt {
            for j in 0..d {
                out[[i, j]] = c[j] + normal.sample(&mut r);
            }
            i += 1;
        }
    }
    out
}

pub fn uniform_matrix(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, d), |_| r.random_range(lo..hi))
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn random_diag_gmm(k: usize, d: usize, seed: u64) -> GmmParams {
    let mut r = rng(seed);
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = Array1::from_iter(raw.iter().map(|w| w / total));
    let means = Array2::from_shape_fn((k, d), |_| r.random_range(-2.0..2.0));
    let vars = Array2::from_shape_fn((k, d), |_| r.random_range(0.2..2.0));
    GmmParams::new(weights, means, Covariances::Diagonal(vars)).unwrap()
}

/// Mixture density by direct summation of explicit Gaussian pdfs (2-D full
/// via the closed-form 2x2 inverse, diagonal via per-feature products).
pub fn direct_density(model: &GmmParams, x: &[f64]) -> f64 {
    let d = model.dim();
    let terms = (0..model.k()).map(|c| {
        let w = model.weights()[c];
        let mu = model.means().row(c).to_owned();
        match model.covariances() {
            Covariances::Diagonal(v) => {
                let mut p = 1.0;
                for j in 0..d {
                    let var = v[[c, j]];
                    let e = x[j] - mu[j];
                    p *= (-(e * e) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
                }
                w * p
            }
            Covariances::Full(m) => {
                assert_eq!(d, 2);
                let (a, b, cc) = (m[[c, 0, 0]], m[[c, 0, 1]], m[[c, 1, 1]]);
                let det = a * cc - b * b;
                let (e0, e1) = (x[0] - mu[0], x[1] - mu[1]);
                let q = (cc * e0 * e0 - 2.0 * b * e0 * e1 + a * e1 * e1) / det;
                w * (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
            }
        }
    });
    compensated_sum(terms)
}
