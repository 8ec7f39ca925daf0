//! Configuration-driven experiment scenarios.
//!
//! A run sweeps one variable (Dirichlet/quantity alpha, client count, or the
//! number of local components) and repeats every sweep point `repeats` times.
//! Each (sweep point, repeat) cell draws its own dataset split, partition and
//! test set, then trains and scores every configured method. Cells run in
//! parallel; results are gathered in cell order so the output does not
//! depend on scheduling.
//!
//! Seeds: with `tags = [scenario, sweep_index, repeat]`, data preparation
//! uses `derive(seed_base, tags ++ [stage])` for the stages below and method
//! `m` uses `derive(seed_base, tags ++ [m.tag()])`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dem::{dem_train, local_models_score, benchmark_train, DemConfig, InitScheme};
use crate::error::{Error, Result};
use crate::eval::{anomaly_scores, auc_pr, fitness_gamma, MetricRecord, Method};
use crate::gmm::FitConfig;
use crate::io::{load_csv, LabelColumn};
use crate::one_shot::{aggregate, train_client, AggregationConfig, ClientModel, DEFAULT_H};
use crate::partition::{
    alternating_shift, build_split_testset, gen_mixture_dataset, partition, AnomalyTestSet,
    LabeledDataset, OodKind, OodSpec, Partition, PartitionScheme, PartitionSpec,
};
use crate::pca::pca_reduce;
use crate::seed;

const STAGE_DATA: u64 = 101;
const STAGE_SPLIT: u64 = 102;
const STAGE_PARTITION: u64 = 103;
const STAGE_TEST: u64 = 104;
const STAGE_LOCAL: u64 = 105;

pub const METRICS: [&str; 3] = ["gamma", "auc_pr", "rounds"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Regenerated for every cell from the cell's data seed.
    Synthetic {
        m_classes: usize,
        d: usize,
        n: usize,
        separation: f64,
    },
    /// Loaded once; optionally reduced with PCA before normalization.
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<String>,
        #[serde(default)]
        pca_dims: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Dirichlet,
    Quantity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Alpha,
    NClients,
    KClients,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariable::Alpha => "alpha",
            SweepVariable::NClients => "n_clients",
            SweepVariable::KClients => "k_clients",
        }
    }

    fn tag(self) -> u64 {
        match self {
            SweepVariable::Alpha => 1,
            SweepVariable::NClients => 2,
            SweepVariable::KClients => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Fractions of the shuffled dataset used for training and for the inlier
/// half of the test set; the remainder is the OOD source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub test_inlier: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            test_inlier: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodTransform {
    AdditiveGaussian { variance: f64 },
    /// Shift by `n_sd` pooled within-class standard deviations of the
    /// training rows, alternating sign across features.
    MixtureShift { n_sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodConfig {
    #[serde(flatten)]
    pub transform: OodTransform,
    pub anomaly_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemSettings {
    pub tol: f64,
    pub max_rounds: usize,
    pub subset_size: usize,
}

impl Default for DemSettings {
    fn default() -> Self {
        let d = DemConfig::default();
        Self {
            tol: d.tol,
            max_rounds: d.max_rounds,
            subset_size: d.subset_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitFractions,
    pub scheme: SchemeKind,
    pub sweep: Sweep,
    /// Client count when the sweep is not over clients.
    #[serde(default = "default_n_clients")]
    pub n_clients: usize,
    /// Partition alpha when the sweep is not over alpha.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Fixed local component count; `None` uses the `gmm` k range locally.
    #[serde(default)]
    pub k_clients: Option<usize>,
    /// Global fit settings, also used by the benchmark. DEM uses `k_max`.
    pub gmm: FitConfig,
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default)]
    pub dem: DemSettings,
    pub methods: Vec<Method>,
    pub ood: OodConfig,
    /// Test-set size; defaults to the size of the inlier test part.
    #[serde(default)]
    pub test_size: Option<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed_base: u64,
}

fn default_n_clients() -> usize {
    20
}
fn default_alpha() -> f64 {
    0.2
}
fn default_h() -> usize {
    DEFAULT_H
}
fn default_repeats() -> usize {
    5
}

fn integral(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::invalid(format!("{what} must be a positive integer, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::invalid("the sweep has no values"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods configured"));
        }
        let s = self.split;
        if !(s.train > 0.0 && s.test_inlier > 0.0 && s.train + s.test_inlier < 1.0) {
            return Err(Error::invalid(
                "split fractions must be positive and leave room for the OOD source",
            ));
        }
        if self.h < 1 {
            return Err(Error::invalid("h must be at least 1"));
        }
        self.gmm.validate()?;
        if let DatasetSource::Synthetic { m_classes, d, n, separation } = &self.dataset {
            if *m_classes < 1 || *d < 1 || *n < 1 || !separation.is_finite() {
                return Err(Error::invalid("synthetic dataset needs m_classes, d, n >= 1"));
            }
        }
        let probe = OodSpec {
            kind: OodKind::AdditiveGaussian { variance: 1.0 },
            anomaly_ratio: self.ood.anomaly_ratio,
        };
        probe.validate()?;
        match self.ood.transform {
            OodTransform::AdditiveGaussian { variance } if !(variance > 0.0) => {
                return Err(Error::invalid("OOD noise variance must be positive"))
            }
            OodTransform::MixtureShift { n_sd } if !n_sd.is_finite() => {
                return Err(Error::invalid("OOD shift must be finite"))
            }
            _ => {}
        }
        for i in 0..self.sweep.values.len() {
            self.cell_settings(i)?;
        }
        Ok(())
    }

    /// `(partition spec without seed, local k)` of sweep point `i`.
    fn cell_settings(&self, i: usize) -> Result<(PartitionScheme, usize, Option<usize>)> {
        let v = self.sweep.values[i];
        let (alpha, n_clients, k_clients) = match self.sweep.variable {
            SweepVariable::Alpha => (v, self.n_clients, self.k_clients),
            SweepVariable::NClients => (self.alpha, integral(v, "client count")?, self.k_clients),
            SweepVariable::KClients => (self.alpha, self.n_clients, Some(integral(v, "k_clients")?)),
        };
        if n_clients < 1 {
            return Err(Error::invalid("n_clients must be at least 1"));
        }
        let scheme = match self.scheme {
            SchemeKind::Dirichlet if alpha > 0.0 && alpha.is_finite() => PartitionScheme::Dirichlet { alpha },
            SchemeKind::Dirichlet => {
                return Err(Error::invalid(format!("Dirichlet alpha must be positive, got {alpha}")))
            }
            SchemeKind::Quantity => PartitionScheme::Quantity {
                alpha: integral(alpha, "quantity alpha")?,
            },
        };
        if k_clients == Some(0) {
            return Err(Error::invalid("k_clients must be at least 1"));
        }
        Ok((scheme, n_clients, k_clients))
    }

    fn cell_tags(&self, sweep_idx: usize, repeat: usize) -> [u64; 3] {
        [self.sweep.variable.tag(), sweep_idx as u64, repeat as u64]
    }

    fn stage_seed(&self, sweep_idx: usize, repeat: usize, stage: u64) -> u64 {
        let t = self.cell_tags(sweep_idx, repeat);
        seed::derive(self.seed_base, &[t[0], t[1], t[2], stage])
    }

    pub fn method_seed(&self, sweep_idx: usize, repeat: usize, method: Method) -> u64 {
        self.stage_seed(sweep_idx, repeat, method.tag())
    }
}

/// Everything a cell's methods share.
#[derive(Debug, Clone)]
pub struct CellData {
    pub dataset: LabeledDataset,
    /// Dataset rows of the training part, in partition index space.
    pub train_rows: Vec<usize>,
    pub test_inlier_rows: Vec<usize>,
    pub ood_source_rows: Vec<usize>,
    /// Partition of the training part (indices into `train_rows`).
    pub partition: Partition,
    pub test: AnomalyTestSet,
    pub k_clients: Option<usize>,
}

impl CellData {
    pub fn train_matrix(&self) -> Array2<f64> {
        self.dataset.rows.select(Axis(0), &self.train_rows)
    }

    pub fn client_matrices(&self) -> Vec<Array2<f64>> {
        self.partition
            .assignments
            .iter()
            .map(|idx| {
                let rows: Vec<usize> = idx.iter().map(|&i| self.train_rows[i]).collect();
                self.dataset.rows.select(Axis(0), &rows)
            })
            .collect()
    }

    /// Dataset rows the test set was built from.
    pub fn test_dataset_rows(&self) -> Vec<usize> {
        self.test
            .source_rows
            .iter()
            .zip(&self.test.labels)
            .map(|(&src, &anom)| if anom { self.ood_source_rows[src] } else { self.test_inlier_rows[src] })
            .collect()
    }

    /// Errors if a test row comes from a row that any client trains on.
    pub fn audit_hygiene(&self) -> Result<()> {
        let mut in_train = vec![false; self.dataset.len()];
        for rows in &self.partition.assignments {
            for &i in rows {
                in_train[self.train_rows[i]] = true;
            }
        }
        if let Some(r) = self.test_dataset_rows().into_iter().find(|&r| in_train[r]) {
            return Err(Error::invalid(format!("row {r} is both a training and a test row")));
        }
        Ok(())
    }
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Option<LabeledDataset>> {
    match &cfg.dataset {
        DatasetSource::Synthetic { .. } => Ok(None),
        DatasetSource::Csv { path, label_column, pca_dims } => {
            let label = label_column.as_deref().map(str::parse::<LabelColumn>).transpose()?;
            let mut data = load_csv(path, label.as_ref())?;
            if let Some(t) = pca_dims {
                data.rows = pca_reduce(data.rows.view(), *t)?;
            }
            Ok(Some(data))
        }
    }
}

/// Builds the shared data of one cell. `loaded` is the CSV dataset when the
/// config reads one.
pub fn prepare_cell(
    cfg: &ExperimentConfig,
    loaded: Option<&LabeledDataset>,
    sweep_idx: usize,
    repeat: usize,
) -> Result<CellData> {
    let (scheme, n_clients, k_clients) = cfg.cell_settings(sweep_idx)?;
    let dataset = match (&cfg.dataset, loaded) {
        (DatasetSource::Synthetic { m_classes, d, n, separation }, _) => {
            gen_mixture_dataset(*m_classes, *d, *n, *separation, cfg.stage_seed(sweep_idx, repeat, STAGE_DATA))?.0
        }
        (DatasetSource::Csv { .. }, Some(data)) => data.clone(),
        (DatasetSource::Csv { .. }, None) => return Err(Error::invalid("CSV dataset was not loaded")),
    };
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(cfg.stage_seed(sweep_idx, repeat, STAGE_SPLIT)));
    let n_train = (cfg.split.train * n as f64).round() as usize;
    let n_inlier = (cfg.split.test_inlier * n as f64).round() as usize;
    if n_train == 0 || n_inlier == 0 || n_train + n_inlier >= n {
        return Err(Error::invalid(format!("dataset of {n} rows is too small to split")));
    }
    let mut train_rows = order[..n_train].to_vec();
    let mut test_inlier_rows = order[n_train..n_train + n_inlier].to_vec();
    let mut ood_source_rows = order[n_train + n_inlier..].to_vec();
    train_rows.sort_unstable();
    test_inlier_rows.sort_unstable();
    ood_source_rows.sort_unstable();

    let train = dataset.subset(&train_rows);
    let partition = partition(
        &train,
        &PartitionSpec {
            scheme,
            n_clients,
            seed: cfg.stage_seed(sweep_idx, repeat, STAGE_PARTITION),
        },
    )?;
    let kind = match cfg.ood.transform {
        OodTransform::AdditiveGaussian { variance } => OodKind::AdditiveGaussian { variance },
        OodTransform::MixtureShift { n_sd } => OodKind::MixtureShift {
            delta: alternating_shift(&train.within_class_std(), n_sd),
        },
    };
    let ood = OodSpec {
        kind,
        anomaly_ratio: cfg.ood.anomaly_ratio,
    };
    let inliers = dataset.rows.select(Axis(0), &test_inlier_rows);
    let source = dataset.rows.select(Axis(0), &ood_source_rows);
    let n_test = cfg.test_size.unwrap_or(test_inlier_rows.len());
    let test = build_split_testset(
        inliers.view(),
        source.view(),
        &ood,
        n_test,
        cfg.stage_seed(sweep_idx, repeat, STAGE_TEST),
    )?;
    let cell = CellData {
        dataset,
        train_rows,
        test_inlier_rows,
        ood_source_rows,
        partition,
        test,
        k_clients,
    };
    cell.audit_hygiene()?;
    Ok(cell)
}

fn local_fit_config(cfg: &ExperimentConfig, k_clients: Option<usize>) -> FitConfig {
    match k_clients {
        Some(k) => FitConfig {
            k_min: k,
            k_max: k,
            ..cfg.gmm.clone()
        },
        None => cfg.gmm.clone(),
    }
}

fn train_locals(cfg: &ExperimentConfig, cell: &CellData, clients: &[Array2<f64>], sweep_idx: usize, repeat: usize) -> Result<Vec<ClientModel>> {
    let base = local_fit_config(cfg, cell.k_clients);
    let local_seed = cfg.stage_seed(sweep_idx, repeat, STAGE_LOCAL);
    clients
        .iter()
        .enumerate()
        .map(|(c, data)| train_client(data.view(), &base.clone().with_seed(seed::derive(local_seed, &[c as u64]))))
        .collect()
}

fn score(model: &crate::gmm::GmmParams, train: &Array2<f64>, test: &AnomalyTestSet) -> Result<(f64, f64)> {
    let gamma = fitness_gamma(model, train.view())?;
    let scores = anomaly_scores(model, test.rows.view())?;
    let auc = auc_pr(scores.as_slice().expect("contiguous"), &test.labels)?;
    Ok((gamma, auc))
}

/// Outcome of one (method, sweep point, repeat) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub method: Method,
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub repeat: usize,
    pub record: Option<MetricRecord>,
    /// Set when the cell failed; the cell is then missing from the summary.
    pub error: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    sweep_idx: usize,
    repeat: usize,
    cell: &CellData,
    train: &Array2<f64>,
    clients: &[Array2<f64>],
    locals: &Result<Vec<ClientModel>>,
) -> Result<MetricRecord> {
    let seed = cfg.method_seed(sweep_idx, repeat, method);
    let local_models = || locals.as_ref().map_err(|e| Error::invalid(format!("local training failed: {e}")));
    let views: Vec<_> = clients.iter().map(|c| c.view()).collect();
    let (gamma, auc, rounds) = match method {
        Method::FedGenGmm => {
            let agg = aggregate(
                local_models()?,
                &AggregationConfig {
                    h: cfg.h,
                    global_fit: cfg.gmm.clone().with_seed(seed::derive(seed, &[1])),
                    seed: seed::derive(seed, &[0]),
                },
            )?;
            let (g, a) = score(&agg.params, train, &cell.test)?;
            (g, a, agg.ledger.client_to_server_rounds)
        }
        Method::DemInit1 | Method::DemInit2 | Method::DemInit3 => {
            let init_scheme = match method {
                Method::DemInit1 => InitScheme::RangeSeparated,
                Method::DemInit2 => InitScheme::SubsetPretrain,
                _ => InitScheme::FederatedKMeans,
            };
            let out = dem_train(
                &views,
                &DemConfig {
                    k: cfg.gmm.k_max,
                    init_scheme,
                    cov_type: cfg.gmm.cov_type,
                    tol: cfg.dem.tol,
                    max_rounds: cfg.dem.max_rounds,
                    subset_size: cfg.dem.subset_size,
                    reg_floor: cfg.gmm.reg_floor,
                    seed,
                },
            )?;
            let (g, a) = score(&out.params, train, &cell.test)?;
            (g, a, out.rounds)
        }
        Method::LocalModels => {
            let models = local_models()?;
            let gamma = local_models_score(models, train.view())?;
            let mut auc = 0.0;
            for m in models {
                let scores = anomaly_scores(&m.params, cell.test.rows.view())?;
                auc += auc_pr(scores.as_slice().expect("contiguous"), &cell.test.labels)?;
            }
            (gamma, auc / models.len() as f64, 0)
        }
        Method::Benchmark => {
            let (model, _) = benchmark_train(train.view(), &cfg.gmm.clone().with_seed(seed))?;
            let (g, a) = score(&model, train, &cell.test)?;
            (g, a, 0)
        }
    };
    Ok(MetricRecord {
        method,
        gamma,
        auc_pr: auc,
        rounds,
        seed,
    })
}

fn run_cell(cfg: &ExperimentConfig, loaded: Option<&LabeledDataset>, sweep_idx: usize, repeat: usize) -> Vec<CellOutcome> {
    let sweep_value = cfg.sweep.values[sweep_idx];
    let outcome = |method: Method, r: Result<MetricRecord>| CellOutcome {
        method,
        sweep_index: sweep_idx,
        sweep_value,
        repeat,
        error: r.as_ref().err().map(|e| e.to_string()),
        record: r.ok(),
    };
    let cell = match prepare_cell(cfg, loaded, sweep_idx, repeat) {
        Ok(c) => c,
        Err(e) => {
            let msg = e.to_string();
            return cfg
                .methods
                .iter()
                .map(|&m| outcome(m, Err(Error::invalid(format!("data preparation failed: {msg}")))))
                .collect();
        }
    };
    let train = cell.train_matrix();
    let clients = cell.client_matrices();
    let needs_locals = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::FedGenGmm | Method::LocalModels));
    let locals = if needs_locals {
        train_locals(cfg, &cell, &clients, sweep_idx, repeat)
    } else {
        Ok(Vec::new())
    };
    cfg.methods
        .iter()
        .map(|&m| outcome(m, run_method(cfg, m, sweep_idx, repeat, &cell, &train, &clients, &locals)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub sweep_variable: SweepVariable,
    pub sweep_value: f64,
    pub metric: &'static str,
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`); 0 for a single repeat.
    pub std: f64,
    pub n_repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub sweep_variable: SweepVariable,
    pub outcomes: Vec<CellOutcome>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    pub fn n_missing(&self) -> usize {
        self.outcomes.iter().filter(|o| o.record.is_none()).count()
    }

    pub fn row(&self, method: Method, sweep_value: f64, metric: &str) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.sweep_value == sweep_value && r.metric == metric)
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

fn summarize(cfg: &ExperimentConfig, outcomes: &[CellOutcome]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for (i, &value) in cfg.sweep.values.iter().enumerate() {
            let records: Vec<&MetricRecord> = outcomes
                .iter()
                .filter(|o| o.method == method && o.sweep_index == i)
                .filter_map(|o| o.record.as_ref())
                .collect();
            for metric in METRICS {
                let vals: Vec<f64> = records
                    .iter()
                    .map(|r| match metric {
                        "gamma" => r.gamma,
                        "auc_pr" => r.auc_pr,
                        _ => r.rounds as f64,
                    })
                    .collect();
                let (mean, std) = mean_std(&vals);
                rows.push(SummaryRow {
                    method,
                    sweep_variable: cfg.sweep.variable,
                    sweep_value: value,
                    metric,
                    mean,
                    std,
                    n_repeats: vals.len(),
                });
            }
        }
    }
    rows
}

/// Runs every (sweep point, repeat) cell. Failures are recorded per cell and
/// never abort the run; only an invalid config or an unreadable dataset does.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let loaded = load_dataset(cfg)?;
    let cells: Vec<(usize, usize)> = (0..cfg.sweep.values.len())
        .flat_map(|i| (0..cfg.repeats).map(move |r| (i, r)))
        .collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(i, r)| run_cell(cfg, loaded.as_ref(), i, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summary = summarize(cfg, &outcomes);
    Ok(ExperimentResult {
        sweep_variable: cfg.sweep.variable,
        outcomes,
        summary,
    })
}

/// Long-format table: `method,sweep_variable,sweep_value,metric,mean,std,n_repeats`,
/// methods in config order, then sweep values, then metrics.
pub fn results_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("method,sweep_variable,sweep_value,metric,mean,std,n_repeats\n");
    for r in &result.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method,
            r.sweep_variable.as_str(),
            r.sweep_value,
            r.metric,
            r.mean,
            r.std,
            r.n_repeats
        );
    }
    out
}

pub fn emit_results(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(results_csv(result).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Per-repeat records: `method,sweep_value,repeat,seed,gamma,auc_pr,rounds,error`.
pub fn records_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("method,sweep_value,repeat,seed,gamma,auc_pr,rounds,error\n");
    for o in &result.outcomes {
        match (&o.record, &o.error) {
            (Some(r), _) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},",
                    o.method, o.sweep_value, o.repeat, r.seed, r.gamma, r.auc_pr, r.rounds
                );
            }
            (None, e) => {
                let msg = e.as_deref().unwrap_or("").replace(['"', '\n'], " ");
                let _ = writeln!(out, "{},{},{},,,,,\"{}\"", o.method, o.sweep_value, o.repeat, msg);
            }
        }
    }
    out
}
