use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use super::{
    check_data, kmeans, linalg, CovarianceType, Covariances, Evaluator, FitConfig, FitReport,
    GmmParams,
};
use crate::error::{Error, Result};
use crate::seed;

/// Components whose responsibility mass falls below this are treated as empty.
const EMPTY_COMPONENT_MASS: f64 = 1e-12;
/// Lloyd iterations used for the k-means initialization.
const INIT_LLOYD_ITERS: usize = 10;
/// BIC values closer than this are ties and resolve to the smaller k.
const BIC_TIE_TOL: f64 = 1e-12;

/// Responsibilities and per-row log densities.
pub(crate) fn e_step_rows(
    model: &GmmParams,
    data: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    if data.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: data.ncols(),
        });
    }
    let eval = Evaluator::new(model)?;
    let (mut buf, mut scratch) = eval.buffers();
    let mut row_buf = vec![0.0; model.dim()];
    let mut resp = Array2::zeros((data.nrows(), model.k()));
    let mut logliks = Array1::zeros(data.nrows());
    for (i, row) in data.rows().into_iter().enumerate() {
        row_buf.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s);
        eval.joint_log_densities(&row_buf, &mut buf, &mut scratch);
        let lse = super::logsumexp(&buf);
        logliks[i] = lse;
        let mut out = resp.row_mut(i);
        for (r, v) in out.iter_mut().zip(&buf) {
            *r = (v - lse).exp();
        }
    }
    Ok((resp, logliks))
}

/// E-step: row-stochastic responsibilities and the average log-likelihood.
pub fn e_step(model: &GmmParams, data: ArrayView2<'_, f64>) -> Result<(Array2<f64>, f64)> {
    if data.nrows() == 0 {
        return Err(Error::invalid("e_step needs at least one row"));
    }
    let (resp, ll) = e_step_rows(model, data)?;
    let avg = ll.mean().unwrap_or(f64::NEG_INFINITY);
    Ok((resp, avg))
}

/// Applies the variance floor: diagonal entries are clamped, full matrices
/// have their eigenvalues clipped.
pub(crate) fn finalize_covariance(cov: &mut Covariances, reg_floor: f64) {
    match cov {
        Covariances::Diagonal(v) => v.mapv_inplace(|x| if x < reg_floor { reg_floor } else { x }),
        Covariances::Full(m) => {
            for mut c in m.outer_iter_mut() {
                let mut owned = c.to_owned();
                linalg::clip_eigenvalues(&mut owned, reg_floor);
                c.assign(&owned);
            }
        }
    }
}

/// Per-feature population variance of the whole dataset, floored.
fn global_variance(data: ArrayView2<'_, f64>, reg_floor: f64) -> Array1<f64> {
    let mean = data.mean_axis(Axis(0)).expect("non-empty data");
    let mut var = Array1::<f64>::zeros(data.ncols());
    for row in data.rows() {
        for j in 0..data.ncols() {
            let diff = row[j] - mean[j];
            var[j] += diff * diff;
        }
    }
    var.mapv(|v| (v / data.nrows() as f64).max(reg_floor))
}

/// M-step from responsibilities.
///
/// A component with responsibility mass below 1e-12 is re-seeded at the data
/// point with the lowest likelihood under the mixture of the remaining
/// components, with the dataset's per-feature variance and weight `1/n`.
pub fn m_step(
    data: ArrayView2<'_, f64>,
    resp: ArrayView2<'_, f64>,
    cov_type: CovarianceType,
    reg_floor: f64,
) -> Result<GmmParams> {
    check_data(&data)?;
    if resp.nrows() != data.nrows() {
        return Err(Error::DimensionMismatch {
            expected: data.nrows(),
            actual: resp.nrows(),
        });
    }
    if !(reg_floor > 0.0) {
        return Err(Error::invalid("reg_floor must be positive"));
    }
    let d = data.ncols();
    let k = resp.ncols();
    if k == 0 {
        return Err(Error::invalid("responsibilities need at least one column"));
    }

    let nk = resp.sum_axis(Axis(0));
    let mut means = Array2::zeros((k, d));
    for (row, r) in data.rows().into_iter().zip(resp.rows()) {
        for c in 0..k {
            if r[c] != 0.0 {
                means.row_mut(c).scaled_add(r[c], &row);
            }
        }
    }
    let empty: Vec<bool> = nk.iter().map(|&m| m < EMPTY_COMPONENT_MASS).collect();
    for c in 0..k {
        if !empty[c] {
            let m = nk[c];
            means.row_mut(c).mapv_inplace(|v| v / m);
        }
    }

    let mut diff = vec![0.0; d];
    let mut covariances = match cov_type {
        CovarianceType::Diagonal => {
            let mut var = Array2::<f64>::zeros((k, d));
            for (row, r) in data.rows().into_iter().zip(resp.rows()) {
                for c in 0..k {
                    let w = r[c];
                    if w == 0.0 || empty[c] {
                        continue;
                    }
                    for j in 0..d {
                        let e = row[j] - means[[c, j]];
                        var[[c, j]] += w * e * e;
                    }
                }
            }
            for c in 0..k {
                if !empty[c] {
                    let m = nk[c];
                    var.row_mut(c).mapv_inplace(|v| v / m);
                }
            }
            Covariances::Diagonal(var)
        }
        CovarianceType::Full => {
            let mut cov = Array3::<f64>::zeros((k, d, d));
            for (row, r) in data.rows().into_iter().zip(resp.rows()) {
                for c in 0..k {
                    let w = r[c];
                    if w == 0.0 || empty[c] {
                        continue;
                    }
                    for j in 0..d {
                        diff[j] = row[j] - means[[c, j]];
                    }
                    for a in 0..d {
                        let wa = w * diff[a];
                        for b in 0..=a {
                            cov[[c, a, b]] += wa * diff[b];
                        }
                    }
                }
            }
            for c in 0..k {
                if empty[c] {
                    continue;
                }
                let m = nk[c];
                for a in 0..d {
                    for b in 0..=a {
                        let v = cov[[c, a, b]] / m;
                        cov[[c, a, b]] = v;
                        cov[[c, b, a]] = v;
                    }
                }
            }
            Covariances::Full(cov)
        }
    };

    let mut weights = nk.clone();
    if empty.iter().any(|&e| e) {
        let fallback_var = global_variance(data, reg_floor);
        let kept: Vec<usize> = (0..k).filter(|&c| !empty[c]).collect();
        let worst = worst_points_under_kept(data, &weights, &means, &covariances, &kept, reg_floor)?;
        let mut worst_iter = worst.into_iter();
        for c in (0..k).filter(|&c| empty[c]) {
            let idx = worst_iter.next().unwrap_or(0);
            means.row_mut(c).assign(&data.row(idx));
            weights[c] = 1.0;
            match &mut covariances {
                Covariances::Diagonal(v) => v.row_mut(c).assign(&fallback_var),
                Covariances::Full(m) => {
                    let mut slab = m.index_axis_mut(Axis(0), c);
                    slab.fill(0.0);
                    slab.diag_mut().assign(&fallback_var);
                }
            }
        }
    }
    finalize_covariance(&mut covariances, reg_floor);
    let total = weights.sum();
    Ok(GmmParams::from_parts_unchecked(
        weights / total,
        means,
        covariances,
    ))
}

/// Row indices sorted by ascending log-likelihood under the non-empty
/// components (ties by index).
fn worst_points_under_kept(
    data: ArrayView2<'_, f64>,
    nk: &Array1<f64>,
    means: &Array2<f64>,
    covariances: &Covariances,
    kept: &[usize],
    reg_floor: f64,
) -> Result<Vec<usize>> {
    let w = nk.select(Axis(0), kept);
    let total = w.sum();
    let mut cov = match covariances {
        Covariances::Diagonal(v) => Covariances::Diagonal(v.select(Axis(0), kept)),
        Covariances::Full(m) => Covariances::Full(m.select(Axis(0), kept)),
    };
    finalize_covariance(&mut cov, reg_floor);
    let provisional = GmmParams::from_parts_unchecked(w / total, means.select(Axis(0), kept), cov);
    let ll = super::log_pdf_rows(&provisional, data)?;
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    order.sort_by(|&a, &b| ll[a].total_cmp(&ll[b]).then(a.cmp(&b)));
    Ok(order)
}

/// Initial parameters from k-means++ seeding, up to ten Lloyd iterations and
/// an M-step on the hard assignments.
pub(crate) fn init_from_kmeans<R: Rng + ?Sized>(
    data: ArrayView2<'_, f64>,
    k: usize,
    cov_type: CovarianceType,
    reg_floor: f64,
    rng: &mut R,
) -> Result<GmmParams> {
    let km = kmeans::kmeans(data, None, k, INIT_LLOYD_ITERS, rng)?;
    let resp = kmeans::one_hot(&km.labels, k);
    m_step(data, resp.view(), cov_type, reg_floor)
}

/// `p ln n - 2 n avg_loglik` with `p` the number of free parameters.
pub(crate) fn bic_value(model: &GmmParams, n: usize, avg_loglik: f64) -> f64 {
    model.n_free_params() as f64 * (n as f64).ln() - 2.0 * n as f64 * avg_loglik
}

/// Bayesian information criterion of `model` on `data`.
pub fn bic(model: &GmmParams, data: ArrayView2<'_, f64>) -> Result<f64> {
    if data.nrows() == 0 {
        return Err(Error::invalid("bic needs at least one row"));
    }
    let ll = super::log_pdf_rows(model, data)?;
    Ok(bic_value(model, data.nrows(), ll.mean().unwrap()))
}

/// EM from the given starting point until the per-point average
/// log-likelihood changes by less than `config.tol` or `config.max_iters`
/// M-steps have run. The k range of `config` is ignored.
pub fn run_em(
    data: ArrayView2<'_, f64>,
    init: GmmParams,
    config: &FitConfig,
) -> Result<(GmmParams, FitReport)> {
    check_data(&data)?;
    config.validate_em()?;
    if init.cov_type() != config.cov_type {
        return Err(Error::invalid(format!(
            "initial model has {} covariances, config asks for {}",
            init.cov_type(),
            config.cov_type
        )));
    }
    let mut params = init;
    let (mut resp, mut ll) = e_step(&params, data)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut n_iters = 0;
    while n_iters < config.max_iters {
        params = m_step(data, resp.view(), config.cov_type, config.reg_floor)?;
        n_iters += 1;
        let (next_resp, next_ll) = e_step(&params, data)?;
        trace.push(next_ll);
        let delta = (next_ll - ll).abs();
        resp = next_resp;
        ll = next_ll;
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    let report = FitReport {
        final_avg_loglik: ll,
        n_iters,
        bic: bic_value(&params, data.nrows(), ll),
        selected_k: params.k(),
        converged,
        loglik_trace: trace,
    };
    Ok((params, report))
}

/// Fits a `k`-component mixture with k-means initialization, keeping the best
/// of `config.n_init` restarts by final log-likelihood.
pub fn fit_em(
    data: ArrayView2<'_, f64>,
    k: usize,
    config: &FitConfig,
) -> Result<(GmmParams, FitReport)> {
    check_data(&data)?;
    config.validate_em()?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if data.nrows() < k {
        return Err(Error::invalid(format!(
            "cannot fit {k} components to {} points",
            data.nrows()
        )));
    }
    let mut best: Option<(GmmParams, FitReport)> = None;
    for restart in 0..config.n_init {
        let mut rng = seed::rng(seed::derive(config.seed, &[restart as u64]));
        let init = init_from_kmeans(data, k, config.cov_type, config.reg_floor, &mut rng)?;
        let fit = run_em(data, init, config)?;
        let better = match &best {
            None => true,
            Some((_, r)) => fit.1.final_avg_loglik > r.final_avg_loglik,
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Fits every k in `[k_min, k_max]` (skipping k larger than the number of
/// rows) and returns the fit with minimal BIC, ties going to the smaller k.
pub fn train_gmm(data: ArrayView2<'_, f64>, config: &FitConfig) -> Result<(GmmParams, FitReport)> {
    check_data(&data)?;
    config.validate()?;
    let n = data.nrows();
    let mut best: Option<(GmmParams, FitReport)> = None;
    for k in config.k_min..=config.k_max.min(n) {
        let fit = fit_em(data, k, config)?;
        let better = match &best {
            None => true,
            Some((_, r)) => fit.1.bic < r.bic - BIC_TIE_TOL,
        };
        if better {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| {
        Error::invalid(format!(
            "no component count in [{}, {}] fits {n} points",
            config.k_min, config.k_max
        ))
    })
}
