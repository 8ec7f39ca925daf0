//! Fitness score, anomaly scoring, AUC-PR and communication accounting.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{log_pdf_rows, GmmParams};

/// Communication counters for one training run.
///
/// `client_to_server_rounds` counts synchronized upload rounds (all clients
/// uploading once is one round); `client_uploads` counts individual
/// client-to-server transfers. Payload is measured in transmitted scalars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub client_to_server_rounds: u64,
    pub server_to_client_rounds: u64,
    pub client_uploads: u64,
    pub payload_floats: u64,
}

impl CommLedger {
    pub fn new(client_to_server_rounds: u64, server_to_client_rounds: u64, payload_floats: u64) -> Self {
        Self {
            client_to_server_rounds,
            server_to_client_rounds,
            client_uploads: 0,
            payload_floats,
        }
    }

    /// One synchronized upload round in which each client sends the given
    /// number of scalars.
    pub fn upload_round(per_client_payload: impl IntoIterator<Item = usize>) -> Self {
        let mut ledger = Self {
            client_to_server_rounds: 1,
            ..Self::default()
        };
        for p in per_client_payload {
            ledger.client_uploads += 1;
            ledger.payload_floats += p as u64;
        }
        ledger
    }

    /// One broadcast of `payload` scalars to each of `n_clients` clients.
    pub fn broadcast(n_clients: usize, payload: usize) -> Self {
        Self {
            server_to_client_rounds: 1,
            payload_floats: (n_clients * payload) as u64,
            ..Self::default()
        }
    }
}

pub fn ledger_merge(a: CommLedger, b: CommLedger) -> CommLedger {
    CommLedger {
        client_to_server_rounds: a.client_to_server_rounds + b.client_to_server_rounds,
        server_to_client_rounds: a.server_to_client_rounds + b.server_to_client_rounds,
        client_uploads: a.client_uploads + b.client_uploads,
        payload_floats: a.payload_floats + b.payload_floats,
    }
}

impl Add for CommLedger {
    type Output = CommLedger;

    fn add(self, rhs: CommLedger) -> CommLedger {
        ledger_merge(self, rhs)
    }
}

impl AddAssign for CommLedger {
    fn add_assign(&mut self, rhs: CommLedger) {
        *self = ledger_merge(*self, rhs);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fedgengmm")]
    FedGenGmm,
    #[serde(rename = "dem_init1")]
    DemInit1,
    #[serde(rename = "dem_init2")]
    DemInit2,
    #[serde(rename = "dem_init3")]
    DemInit3,
    #[serde(rename = "local_models")]
    LocalModels,
    #[serde(rename = "benchmark")]
    Benchmark,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::FedGenGmm,
        Method::DemInit1,
        Method::DemInit2,
        Method::DemInit3,
        Method::LocalModels,
        Method::Benchmark,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FedGenGmm => "fedgengmm",
            Method::DemInit1 => "dem_init1",
            Method::DemInit2 => "dem_init2",
            Method::DemInit3 => "dem_init3",
            Method::LocalModels => "local_models",
            Method::Benchmark => "benchmark",
        }
    }

    /// Stable tag used in seed derivation.
    pub(crate) fn tag(self) -> u64 {
        match self {
            Method::FedGenGmm => 1,
            Method::DemInit1 => 2,
            Method::DemInit2 => 3,
            Method::DemInit3 => 4,
            Method::LocalModels => 5,
            Method::Benchmark => 6,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Metrics of one method in one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: Method,
    pub gamma: f64,
    pub auc_pr: f64,
    pub rounds: u64,
    pub seed: u64,
}

/// Average per-point log-likelihood of `data` under `model`.
pub fn fitness_gamma(model: &GmmParams, data: ArrayView2<'_, f64>) -> Result<f64> {
    if data.nrows() == 0 {
        return Err(Error::invalid("fitness score needs at least one row"));
    }
    let ll = log_pdf_rows(model, data)?;
    Ok(ll.sum() / ll.len() as f64)
}

/// Negative log-likelihood per row; higher means more anomalous.
pub fn anomaly_scores(model: &GmmParams, rows: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    Ok(log_pdf_rows(model, rows)?.mapv(|v| -v))
}

/// Area under the precision-recall curve as step-wise average precision:
/// thresholds are the distinct scores in descending order, tied scores
/// share one threshold, and the area is `sum (R_i - R_{i-1}) * P_i`.
/// Label `true` is the positive (anomalous) class.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::invalid(
            "AUC-PR needs at least one positive and one negative label",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let total_pos = positives as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area.clamp(0.0, 1.0))
}
