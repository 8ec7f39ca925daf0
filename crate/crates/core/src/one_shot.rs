//! One-shot aggregation: clients upload converged local mixtures once, the
//! server pools them with dataset-size weights, draws a synthetic dataset
//! from the pooled mixture and fits the global model to it.

use ndarray::{concatenate, Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::CommLedger;
use crate::gmm::{self, Covariances, FitConfig, FitReport, GmmParams};

/// Default number of synthetic points per uploaded component.
pub const DEFAULT_H: usize = 100;

/// A trained local mixture and the size of the dataset it was fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientModel {
    pub params: GmmParams,
    pub n_local: usize,
}

impl ClientModel {
    pub fn new(params: GmmParams, n_local: usize) -> Result<Self> {
        if n_local == 0 {
            return Err(Error::invalid("a client must hold at least one sample"));
        }
        Ok(Self { params, n_local })
    }

    /// Scalars in the upload: weights, means, covariance parameters, n_local.
    pub fn upload_payload(&self) -> usize {
        self.params.n_transmitted_floats() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub h: usize,
    pub global_fit: FitConfig,
    /// Seed of the synthetic draw.
    pub seed: u64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            h: DEFAULT_H,
            global_fit: FitConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticStats {
    pub synthetic_size: usize,
    pub pooled_k: usize,
}

#[derive(Debug, Clone)]
pub struct Aggregated {
    pub params: GmmParams,
    pub report: FitReport,
    pub stats: SyntheticStats,
    /// Traffic attributable to the aggregation: one upload per client.
    pub ledger: CommLedger,
}

fn check_clients(clients: &[ClientModel]) -> Result<()> {
    let first = clients
        .first()
        .ok_or_else(|| Error::invalid("at least one client model is required"))?;
    let (d, cov) = (first.params.dim(), first.params.cov_type());
    for (i, c) in clients.iter().enumerate() {
        if c.params.dim() != d {
            return Err(Error::invalid(format!(
                "client {i} has dimension {}, client 0 has {d}",
                c.params.dim()
            )));
        }
        if c.params.cov_type() != cov {
            return Err(Error::invalid(format!(
                "client {i} uses {} covariances, client 0 uses {cov}",
                c.params.cov_type()
            )));
        }
        if c.n_local == 0 {
            return Err(Error::invalid(format!("client {i} reports an empty dataset")));
        }
    }
    Ok(())
}

/// Concatenates all client components into one mixture. Component `(c, k)`
/// gets weight `r_ck * n_c / sum(n)` before the final normalization.
pub fn pool_clients(clients: &[ClientModel]) -> Result<GmmParams> {
    check_clients(clients)?;
    let total: f64 = clients.iter().map(|c| c.n_local as f64).sum();
    let weights: Vec<f64> = clients
        .iter()
        .flat_map(|c| {
            let scale = c.n_local as f64 / total;
            c.params.weights().iter().map(move |r| r * scale).collect::<Vec<_>>()
        })
        .collect();
    let weights = Array1::from(weights);
    let norm = weights.sum();

    let means: Vec<_> = clients.iter().map(|c| c.params.means()).collect();
    let means = concatenate(Axis(0), &means).expect("same dimension checked");
    let covariances = match clients[0].params.covariances() {
        Covariances::Diagonal(_) => {
            let parts: Vec<_> = clients
                .iter()
                .map(|c| match c.params.covariances() {
                    Covariances::Diagonal(v) => v.view(),
                    Covariances::Full(_) => unreachable!("covariance type checked"),
                })
                .collect();
            Covariances::Diagonal(concatenate(Axis(0), &parts).expect("shapes checked"))
        }
        Covariances::Full(_) => {
            let parts: Vec<_> = clients
                .iter()
                .map(|c| match c.params.covariances() {
                    Covariances::Full(m) => m.view(),
                    Covariances::Diagonal(_) => unreachable!("covariance type checked"),
                })
                .collect();
            Covariances::Full(concatenate(Axis(0), &parts).expect("shapes checked"))
        }
    };
    Ok(GmmParams::from_parts_unchecked(weights / norm, means, covariances))
}

/// `h * sum_c K_c`.
pub fn synthetic_size(clients: &[ClientModel], h: usize) -> Result<usize> {
    if clients.is_empty() {
        return Err(Error::invalid("at least one client model is required"));
    }
    Ok(h * clients.iter().map(|c| c.params.k()).sum::<usize>())
}

/// Server side: pool, draw the synthetic set with a single seeded stream and
/// fit the global model on it with `config.global_fit`.
pub fn aggregate(clients: &[ClientModel], config: &AggregationConfig) -> Result<Aggregated> {
    if config.h == 0 {
        return Err(Error::invalid("h must be at least 1"));
    }
    config.global_fit.validate()?;
    let pooled = pool_clients(clients)?;
    let pooled_k = pooled.k();
    let size = synthetic_size(clients, config.h)?;
    let drawable = pooled.without_zero_weight_components()?;
    let synthetic = gmm::sample(&drawable, size, config.seed)?;
    let (params, report) = gmm::train_gmm(synthetic.view(), &config.global_fit)?;
    let ledger = CommLedger::upload_round(clients.iter().map(ClientModel::upload_payload));
    Ok(Aggregated {
        params,
        report,
        stats: SyntheticStats {
            synthetic_size: size,
            pooled_k,
        },
        ledger,
    })
}

/// Client side: BIC sweep over the configured k range, clipped to the local
/// sample count so that tiny local datasets still produce a model.
pub fn train_client(data: ArrayView2<'_, f64>, config: &FitConfig) -> Result<ClientModel> {
    let n = data.nrows();
    if n == 0 {
        return Err(Error::invalid("client dataset is empty"));
    }
    let mut local = config.clone();
    local.k_max = config.k_max.min(n);
    local.k_min = config.k_min.min(local.k_max);
    let (params, _) = gmm::train_gmm(data, &local)?;
    ClientModel::new(params, n)
}
