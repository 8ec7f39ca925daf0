//! Distributed EM baseline and the non-federated reference points.
//!
//! Each round the server broadcasts the global mixture, every client runs one
//! E-step and returns additive sufficient statistics, and the server applies
//! the M-step to their sum. Because the statistics are additive a round over
//! any partition of a dataset equals one centralized EM iteration on it.

use ndarray::{concatenate, Array1, Array2, Array3, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{fitness_gamma, CommLedger};
use crate::gmm::{
    self, finalize_covariance, kmeans, CovarianceType, Covariances, FitConfig, FitReport,
    GmmParams, DEFAULT_REG_FLOOR, DEFAULT_TOL,
};
use crate::one_shot::ClientModel;
use crate::seed;

/// Variance per feature of the initial components built from centers alone.
pub const INIT_VARIANCE: f64 = 0.05;
/// Candidate pool size per requested center for the range-based init.
const RANGE_POOL_FACTOR: usize = 100;
pub const DEFAULT_SUBSET_SIZE: usize = 100;
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Farthest-point centers in the unit hypercube; no client traffic.
    RangeSeparated,
    /// EM on a small uniformly drawn subset of the training data.
    SubsetPretrain,
    /// Federated k-means over client-side cluster summaries.
    FederatedKMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemConfig {
    pub k: usize,
    pub init_scheme: InitScheme,
    pub cov_type: CovarianceType,
    /// Stop when the weighted average log-likelihood changes by less than this.
    pub tol: f64,
    pub max_rounds: usize,
    pub subset_size: usize,
    pub reg_floor: f64,
    pub seed: u64,
}

impl Default for DemConfig {
    fn default() -> Self {
        Self {
            k: 1,
            init_scheme: InitScheme::FederatedKMeans,
            cov_type: CovarianceType::Diagonal,
            tol: DEFAULT_TOL,
            max_rounds: 200,
            subset_size: DEFAULT_SUBSET_SIZE,
            reg_floor: DEFAULT_REG_FLOOR,
            seed: 0,
        }
    }
}

impl DemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::invalid("DEM needs k >= 1"));
        }
        if self.max_rounds < 1 {
            return Err(Error::invalid("max_rounds must be at least 1"));
        }
        if !(self.tol > 0.0) || !(self.reg_floor > 0.0) {
            return Err(Error::invalid("tol and reg_floor must be positive"));
        }
        if self.init_scheme == InitScheme::SubsetPretrain && self.subset_size < self.k {
            return Err(Error::invalid(format!(
                "subset_size {} is smaller than k = {}",
                self.subset_size, self.k
            )));
        }
        Ok(())
    }
}

/// Second moments, `sum_i r_ik x_i x_i^T` or only its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub enum SecondMoments {
    Diagonal(Array2<f64>),
    Full(Array3<f64>),
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub resp_sums: Array1<f64>,
    pub weighted_sums: Array2<f64>,
    pub weighted_sq: SecondMoments,
    pub n_local: usize,
    pub local_avg_loglik: f64,
    /// The local point with the lowest likelihood under the broadcast model
    /// and that log-likelihood; used to re-seed empty components.
    pub worst_point: Array1<f64>,
    pub worst_loglik: f64,
}

impl SuffStats {
    pub fn payload(&self) -> usize {
        let (k, d) = self.weighted_sums.dim();
        let sq = match self.weighted_sq {
            SecondMoments::Diagonal(_) => k * d,
            SecondMoments::Full(_) => k * d * (d + 1) / 2,
        };
        k + k * d + sq + 2 + d + 1
    }
}

/// Client side of a round: one E-step against the broadcast parameters.
pub fn client_suff_stats(global: &GmmParams, data: ArrayView2<'_, f64>) -> Result<SuffStats> {
    if data.nrows() == 0 {
        return Err(Error::invalid("client dataset is empty"));
    }
    let (resp, ll) = gmm::em_rows(global, data)?;
    let (n, d) = data.dim();
    let k = global.k();
    let resp_sums = resp.sum_axis(Axis(0));
    let weighted_sums = resp.t().dot(&data);
    let weighted_sq = match global.cov_type() {
        CovarianceType::Diagonal => {
            let sq = data.mapv(|v| v * v);
            SecondMoments::Diagonal(resp.t().dot(&sq))
        }
        CovarianceType::Full => {
            let mut m = Array3::<f64>::zeros((k, d, d));
            for (row, r) in data.rows().into_iter().zip(resp.rows()) {
                for c in 0..k {
                    let w = r[c];
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..d {
                        let wa = w * row[a];
                        for b in 0..=a {
                            m[[c, a, b]] += wa * row[b];
                        }
                    }
                }
            }
            for c in 0..k {
                for a in 0..d {
                    for b in 0..a {
                        m[[c, b, a]] = m[[c, a, b]];
                    }
                }
            }
            SecondMoments::Full(m)
        }
    };
    let worst = (0..n)
        .min_by(|&a, &b| ll[a].total_cmp(&ll[b]).then(a.cmp(&b)))
        .expect("non-empty");
    Ok(SuffStats {
        resp_sums,
        weighted_sums,
        weighted_sq,
        n_local: n,
        local_avg_loglik: ll.sum() / n as f64,
        worst_point: data.row(worst).to_owned(),
        worst_loglik: ll[worst],
    })
}

/// Server side of a round: M-step from the summed statistics.
pub fn server_m_step(stats: &[SuffStats], reg_floor: f64) -> Result<GmmParams> {
    let first = stats
        .first()
        .ok_or_else(|| Error::invalid("no client statistics to aggregate"))?;
    let (k, d) = first.weighted_sums.dim();
    let mut nk = Array1::<f64>::zeros(k);
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut sq = match &first.weighted_sq {
        SecondMoments::Diagonal(_) => SecondMoments::Diagonal(Array2::zeros((k, d))),
        SecondMoments::Full(_) => SecondMoments::Full(Array3::zeros((k, d, d))),
    };
    let mut n_total = 0usize;
    for s in stats {
        if s.weighted_sums.dim() != (k, d) {
            return Err(Error::invalid("client statistics disagree on K or d"));
        }
        nk += &s.resp_sums;
        sums += &s.weighted_sums;
        n_total += s.n_local;
        match (&mut sq, &s.weighted_sq) {
            (SecondMoments::Diagonal(acc), SecondMoments::Diagonal(v)) => *acc += v,
            (SecondMoments::Full(acc), SecondMoments::Full(m)) => *acc += m,
            _ => return Err(Error::invalid("client statistics disagree on covariance type")),
        }
    }

    let empty: Vec<bool> = nk.iter().map(|&m| m < 1e-12).collect();
    let mut means = Array2::<f64>::zeros((k, d));
    for c in 0..k {
        if !empty[c] {
            means.row_mut(c).assign(&sums.row(c).mapv(|v| v / nk[c]));
        }
    }
    let mut covariances = match &sq {
        SecondMoments::Diagonal(acc) => {
            let mut var = Array2::<f64>::zeros((k, d));
            for c in 0..k {
                if empty[c] {
                    continue;
                }
                for j in 0..d {
                    var[[c, j]] = acc[[c, j]] / nk[c] - means[[c, j]] * means[[c, j]];
                }
            }
            Covariances::Diagonal(var)
        }
        SecondMoments::Full(acc) => {
            let mut cov = Array3::<f64>::zeros((k, d, d));
            for c in 0..k {
                if empty[c] {
                    continue;
                }
                for a in 0..d {
                    for b in 0..d {
                        cov[[c, a, b]] = acc[[c, a, b]] / nk[c] - means[[c, a]] * means[[c, b]];
                    }
                }
            }
            Covariances::Full(cov)
        }
    };

    let mut weights = nk.clone();
    if empty.iter().any(|&e| e) {
        // Dataset-wide variance from the pooled statistics.
        let n = n_total as f64;
        let total_sum = sums.sum_axis(Axis(0));
        let total_sq: Array1<f64> = match &sq {
            SecondMoments::Diagonal(acc) => acc.sum_axis(Axis(0)),
            SecondMoments::Full(acc) => {
                Array1::from_iter((0..d).map(|j| (0..k).map(|c| acc[[c, j, j]]).sum::<f64>()))
            }
        };
        let fallback: Array1<f64> = Array1::from_iter(
            (0..d).map(|j| (total_sq[j] / n - (total_sum[j] / n).powi(2)).max(reg_floor)),
        );
        let mut reservoir: Vec<&SuffStats> = stats.iter().collect();
        reservoir.sort_by(|a, b| a.worst_loglik.total_cmp(&b.worst_loglik));
        for (slot, c) in (0..k).filter(|&c| empty[c]).enumerate() {
            let src = reservoir[slot % reservoir.len()];
            means.row_mut(c).assign(&src.worst_point);
            weights[c] = 1.0;
            match &mut covariances {
                Covariances::Diagonal(v) => v.row_mut(c).assign(&fallback),
                Covariances::Full(m) => {
                    let mut slab = m.index_axis_mut(Axis(0), c);
                    slab.fill(0.0);
                    slab.diag_mut().assign(&fallback);
                }
            }
        }
    }
    finalize_covariance(&mut covariances, reg_floor);
    let total = weights.sum();
    Ok(GmmParams::from_parts_unchecked(weights / total, means, covariances))
}

#[derive(Debug, Clone)]
pub struct DemRound {
    pub params: GmmParams,
    /// `sum_c n_c * loglik_c / sum_c n_c` of the broadcast parameters.
    pub avg_loglik: f64,
    pub ledger: CommLedger,
}

/// One broadcast, one E-step per client, one server M-step.
pub fn dem_round(
    global: &GmmParams,
    client_data: &[ArrayView2<'_, f64>],
    reg_floor: f64,
) -> Result<DemRound> {
    if client_data.is_empty() {
        return Err(Error::invalid("DEM needs at least one client"));
    }
    let stats = client_data
        .iter()
        .map(|d| client_suff_stats(global, *d))
        .collect::<Result<Vec<_>>>()?;
    let n_total: usize = stats.iter().map(|s| s.n_local).sum();
    let avg_loglik = stats
        .iter()
        .map(|s| s.n_local as f64 * s.local_avg_loglik)
        .sum::<f64>()
        / n_total as f64;
    let params = server_m_step(&stats, reg_floor)?;
    let ledger = CommLedger::broadcast(client_data.len(), global.n_transmitted_floats())
        + CommLedger::upload_round(stats.iter().map(SuffStats::payload));
    Ok(DemRound {
        params,
        avg_loglik,
        ledger,
    })
}

fn uniform_diagonal(centers: Array2<f64>, weights: Array1<f64>, cov_type: CovarianceType) -> GmmParams {
    let (k, d) = centers.dim();
    let covariances = match cov_type {
        CovarianceType::Diagonal => Covariances::Diagonal(Array2::from_elem((k, d), INIT_VARIANCE)),
        CovarianceType::Full => {
            let mut m = Array3::zeros((k, d, d));
            for c in 0..k {
                for j in 0..d {
                    m[[c, j, j]] = INIT_VARIANCE;
                }
            }
            Covariances::Full(m)
        }
    };
    GmmParams::from_parts_unchecked(weights, centers, covariances)
}

/// Greedy farthest-point centers in `[0, 1]^d`: a seeded pool of `100 k`
/// uniform candidates, the first center being the candidate nearest the cube
/// center and each next one the candidate maximizing the distance to the
/// already chosen set. Uniform weights, diagonal variance 0.05.
pub fn dem_init_range(k: usize, d: usize, seed: u64) -> Result<GmmParams> {
    Ok(uniform_diagonal(
        farthest_point_centers(k, d, seed)?,
        Array1::from_elem(k, 1.0 / k as f64),
        CovarianceType::Diagonal,
    ))
}

pub(crate) fn farthest_point_centers(k: usize, d: usize, seed: u64) -> Result<Array2<f64>> {
    if k == 0 || d == 0 {
        return Err(Error::invalid("k and d must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let pool = Array2::from_shape_fn((RANGE_POOL_FACTOR * k, d), |_| rng.random::<f64>());
    let sq = |a: usize, b: &[f64]| -> f64 {
        pool.row(a).iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let center = vec![0.5; d];
    let first = (0..pool.nrows())
        .min_by(|&a, &b| sq(a, &center).total_cmp(&sq(b, &center)))
        .expect("non-empty pool");
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = (0..pool.nrows())
        .map(|i| sq(i, pool.row(first).as_slice().unwrap()))
        .collect();
    while chosen.len() < k {
        let next = (0..pool.nrows())
            .max_by(|&a, &b| min_d[a].total_cmp(&min_d[b]).then(b.cmp(&a)))
            .expect("non-empty pool");
        chosen.push(next);
        let row = pool.row(next).to_vec();
        for (i, m) in min_d.iter_mut().enumerate() {
            *m = m.min(sq(i, &row));
        }
    }
    Ok(pool.select(Axis(0), &chosen))
}

/// Init by EM on a subset of the training data.
pub fn dem_init_subset(subset: ArrayView2<'_, f64>, k: usize, config: &FitConfig) -> Result<GmmParams> {
    if subset.nrows() < k {
        return Err(Error::invalid(format!(
            "subset of {} points cannot initialize {k} components",
            subset.nrows()
        )));
    }
    Ok(gmm::fit_em(subset, k, config)?.0)
}

/// Draws `m` rows uniformly without replacement from the concatenated client
/// data. Also returns how many rows each client contributed.
pub fn draw_subset(
    client_data: &[ArrayView2<'_, f64>],
    m: usize,
    seed: u64,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let sizes: Vec<usize> = client_data.iter().map(|d| d.nrows()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::invalid("no training rows to draw from"));
    }
    let m = m.min(total);
    let mut rng = seed::rng(seed);
    let mut picks = index::sample(&mut rng, total, m).into_vec();
    picks.sort_unstable();
    let mut per_client = vec![0; client_data.len()];
    let d = client_data[0].ncols();
    let mut out = Array2::zeros((m, d));
    for (row, &g) in picks.iter().enumerate() {
        let mut c = 0;
        let mut offset = g;
        while offset >= sizes[c] {
            offset -= sizes[c];
            c += 1;
        }
        per_client[c] += 1;
        out.row_mut(row).assign(&client_data[c].row(offset));
    }
    Ok((out, per_client))
}

#[derive(Debug, Clone)]
pub struct FedKMeans {
    pub centers: Array2<f64>,
    /// Total reported cluster size attached to each global center.
    pub masses: Vec<f64>,
    pub ledger: CommLedger,
}

/// Federated k-means: each client clusters locally with `min(k, n_c)`
/// centers and uploads `(center, size)` pairs; the server runs size-weighted
/// k-means on the union.
pub fn fed_kmeans(client_data: &[ArrayView2<'_, f64>], k: usize, seed: u64) -> Result<FedKMeans> {
    if client_data.is_empty() {
        return Err(Error::invalid("federated k-means needs at least one client"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut centers = Vec::new();
    let mut sizes = Vec::new();
    let mut payloads = Vec::new();
    for (c, data) in client_data.iter().enumerate() {
        if data.nrows() == 0 {
            return Err(Error::invalid(format!("client {c} holds no data")));
        }
        let local_k = k.min(data.nrows());
        let mut rng = seed::rng(seed::derive(seed, &[c as u64]));
        let km = kmeans::kmeans(*data, None, local_k, KMEANS_MAX_ITERS, &mut rng)?;
        payloads.push(local_k * (data.ncols() + 1));
        centers.push(km.centers);
        sizes.extend(km.sizes);
    }
    let views: Vec<_> = centers.iter().map(|c| c.view()).collect();
    let union = concatenate(Axis(0), &views).expect("same dimension");
    let mut rng = seed::rng(seed::derive(seed, &[u64::MAX]));
    let km = kmeans::kmeans(union.view(), Some(&sizes), k, KMEANS_MAX_ITERS, &mut rng)?;
    Ok(FedKMeans {
        centers: km.centers,
        masses: km.sizes,
        ledger: CommLedger::upload_round(payloads),
    })
}

#[derive(Debug, Clone)]
pub struct DemOutput {
    pub params: GmmParams,
    /// Communication rounds: DEM rounds plus any init upload round.
    pub rounds: u64,
    pub report: FitReport,
    pub ledger: CommLedger,
}

/// Builds the initial global model for `config.init_scheme`, with the
/// traffic it costs.
pub fn dem_initialize(
    client_data: &[ArrayView2<'_, f64>],
    config: &DemConfig,
) -> Result<(GmmParams, CommLedger)> {
    let d = client_data
        .first()
        .ok_or_else(|| Error::invalid("DEM needs at least one client"))?
        .ncols();
    let init_seed = seed::derive(config.seed, &[1]);
    match config.init_scheme {
        InitScheme::RangeSeparated => Ok((
            uniform_diagonal(
                farthest_point_centers(config.k, d, init_seed)?,
                Array1::from_elem(config.k, 1.0 / config.k as f64),
                config.cov_type,
            ),
            CommLedger::default(),
        )),
        InitScheme::SubsetPretrain => {
            let (subset, per_client) = draw_subset(client_data, config.subset_size, init_seed)?;
            let fit = FitConfig {
                k_min: config.k,
                k_max: config.k,
                cov_type: config.cov_type,
                tol: config.tol,
                reg_floor: config.reg_floor,
                seed: seed::derive(config.seed, &[2]),
                ..FitConfig::default()
            };
            let params = dem_init_subset(subset.view(), config.k, &fit)?;
            let ledger = CommLedger::upload_round(
                per_client.iter().filter(|&&m| m > 0).map(|m| m * d),
            );
            Ok((params, ledger))
        }
        InitScheme::FederatedKMeans => {
            let fk = fed_kmeans(client_data, config.k, init_seed)?;
            let mass: Vec<f64> = fk.masses.iter().map(|m| m.max(1.0)).collect();
            let total: f64 = mass.iter().sum();
            let weights = Array1::from_iter(mass.iter().map(|m| m / total));
            Ok((uniform_diagonal(fk.centers, weights, config.cov_type), fk.ledger))
        }
    }
}

/// Runs DEM rounds from an explicit starting model. Stops once two
/// consecutive rounds report average log-likelihoods closer than `tol`, and
/// returns the last parameters whose likelihood was evaluated.
pub fn dem_run(
    client_data: &[ArrayView2<'_, f64>],
    init: GmmParams,
    config: &DemConfig,
) -> Result<DemOutput> {
    config.validate()?;
    let mut ledger = CommLedger::default();
    let mut current = init;
    let mut evaluated: Option<(GmmParams, f64)> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut m_steps = 0;
    for _ in 0..config.max_rounds {
        let round = dem_round(&current, client_data, config.reg_floor)?;
        ledger += round.ledger;
        trace.push(round.avg_loglik);
        if let Some((_, prev)) = &evaluated {
            if (round.avg_loglik - prev).abs() < config.tol {
                evaluated = Some((current, round.avg_loglik));
                converged = true;
                break;
            }
        }
        evaluated = Some((current, round.avg_loglik));
        current = round.params;
        m_steps += 1;
    }
    let (params, ll) = evaluated.expect("max_rounds >= 1");
    let n_iters = if converged { m_steps } else { m_steps - 1 };
    let n: usize = client_data.iter().map(|d| d.nrows()).sum();
    let report = FitReport {
        final_avg_loglik: ll,
        n_iters,
        bic: gmm::bic_value(&params, n, ll),
        selected_k: params.k(),
        converged,
        loglik_trace: trace,
    };
    Ok(DemOutput {
        params,
        rounds: ledger.client_to_server_rounds,
        report,
        ledger,
    })
}

/// Initialization followed by DEM rounds.
pub fn dem_train(client_data: &[ArrayView2<'_, f64>], config: &DemConfig) -> Result<DemOutput> {
    config.validate()?;
    let (init, init_ledger) = dem_initialize(client_data, config)?;
    let mut out = dem_run(client_data, init, config)?;
    out.ledger = init_ledger + out.ledger;
    out.rounds = out.ledger.client_to_server_rounds;
    Ok(out)
}

/// Unweighted mean over clients of each local model's fitness score.
pub fn local_models_score(clients: &[ClientModel], eval_data: ArrayView2<'_, f64>) -> Result<f64> {
    if clients.is_empty() {
        return Err(Error::invalid("at least one client model is required"));
    }
    let scores = clients
        .iter()
        .map(|c| fitness_gamma(&c.params, eval_data))
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Non-federated reference: the usual BIC-sweep fit on the pooled data.
pub fn benchmark_train(full_data: ArrayView2<'_, f64>, config: &FitConfig) -> Result<(GmmParams, FitReport)> {
    gmm::train_gmm(full_data, config)
}
