use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedgengmm::dem::{benchmark_train, dem_train, DemConfig, InitScheme};
use fedgengmm::eval::{anomaly_scores, auc_pr, fitness_gamma};
use fedgengmm::experiment::{emit_results, records_csv, run_scenario, ExperimentConfig};
use fedgengmm::gmm::{CovarianceType, FitConfig, DEFAULT_MAX_ITERS, DEFAULT_REG_FLOOR, DEFAULT_TOL};
use fedgengmm::io::{
    load_csv, load_csv_raw, read_models, read_partition_csv, write_dataset_csv, write_models,
    write_partition_csv, LabelColumn,
};
use fedgengmm::one_shot::{aggregate, train_client, AggregationConfig, ClientModel, DEFAULT_H};
use fedgengmm::partition::{gen_mixture_dataset, partition, LabeledDataset, Partition, PartitionScheme, PartitionSpec};
use fedgengmm::{seed, Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "fedgengmm", version, about = "Federated Gaussian mixture training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic mixture dataset as CSV.
    GenData(GenDataArgs),
    /// Split a dataset across clients and write the assignment table.
    Partition(PartitionArgs),
    /// Train one local mixture per client and write them as a model bundle.
    TrainLocal(TrainLocalArgs),
    /// One-shot aggregation of a client model bundle into a global model.
    Aggregate(AggregateArgs),
    /// Distributed EM over partitioned data.
    Dem(DemArgs),
    /// Non-federated fit on the full dataset.
    Benchmark(BenchmarkArgs),
    /// Fitness score and, given anomaly labels, AUC-PR of a model.
    Evaluate(EvaluateArgs),
    /// Run a configured experiment sweep.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    #[arg(long, default_value_t = CovarianceType::Diagonal)]
    cov_type: CovarianceType,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = DEFAULT_REG_FLOOR)]
    reg_floor: f64,
    #[arg(long, default_value_t = 1)]
    n_init: usize,
}

impl FitArgs {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            k_min: self.k_min,
            k_max: self.k_max,
            cov_type: self.cov_type,
            tol: self.tol,
            max_iters: self.max_iters,
            reg_floor: self.reg_floor,
            n_init: self.n_init,
            seed,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Headed CSV; features are min-max normalized on load.
    #[arg(long)]
    data: PathBuf,
    /// Label column, by header name or zero-based index.
    #[arg(long)]
    label_column: Option<String>,
}

impl DataArgs {
    fn load(&self) -> Result<LabeledDataset> {
        let label = self.label_column.as_deref().map(str::parse::<LabelColumn>).transpose()?;
        load_csv(&self.data, label.as_ref())
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Distance between consecutive class centers along the diagonal.
    #[arg(long, default_value_t = 0.5)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating mixture (normalized coordinates).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Dirichlet,
    Quantity,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = SchemeArg::Dirichlet)]
    scheme: SchemeArg,
    /// Dirichlet concentration, or classes per client for the quantity scheme.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 20)]
    clients: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainLocalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    partition: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    /// Client model bundle from `train-local`.
    #[arg(long)]
    models: PathBuf,
    /// Synthetic points drawn per uploaded component.
    #[arg(long, default_value_t = DEFAULT_H)]
    h: usize,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    /// Farthest-point centers in the unit cube.
    Range,
    /// EM on a small subset of training points.
    Subset,
    /// Federated k-means.
    Kmeans,
}

#[derive(Args)]
struct DemArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    partition: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Kmeans)]
    init: InitArg,
    #[arg(long, default_value_t = CovarianceType::Diagonal)]
    cov_type: CovarianceType,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Which record of the model file to use.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Headed CSV in the model's (already normalized) feature space.
    #[arg(long)]
    data: PathBuf,
    /// Column with 0 for inliers and 1 for anomalies; enables AUC-PR.
    #[arg(long)]
    anomaly_column: Option<String>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed_base.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn print_json(value: serde_json::Value) {
    use std::io::Write;
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&value).expect("serializable"));
}

fn client_data(data: &LabeledDataset, partition_path: &Path) -> Result<Partition> {
    let p = read_partition_csv(partition_path)?;
    p.client_of_rows(data.len())?;
    Ok(p)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let (data, truth) = gen_mixture_dataset(a.classes, a.dim, a.n, a.separation, a.seed)?;
    write_dataset_csv(&a.out, &data)?;
    if let Some(path) = a.truth {
        write_models(&path, &[ClientModel::new(truth, a.n)?])?;
    }
    print_json(json!({"rows": data.len(), "dim": data.dim(), "classes": data.n_classes}));
    Ok(())
}

fn partition_cmd(a: PartitionArgs) -> Result<()> {
    let data = a.data.load()?;
    let scheme = match a.scheme {
        SchemeArg::Dirichlet => PartitionScheme::Dirichlet { alpha: a.alpha },
        SchemeArg::Quantity => {
            if a.alpha.fract() != 0.0 || a.alpha < 1.0 {
                return Err(Error::InvalidInput(format!(
                    "quantity alpha must be a positive integer, got {}",
                    a.alpha
                )));
            }
            PartitionScheme::Quantity { alpha: a.alpha as usize }
        }
    };
    let p = partition(&data, &PartitionSpec { scheme, n_clients: a.clients, seed: a.seed })?;
    write_partition_csv(&a.out, &p, &data.labels)?;
    let sizes: Vec<usize> = p.assignments.iter().map(Vec::len).collect();
    print_json(json!({"clients": p.n_clients(), "sizes": sizes}));
    Ok(())
}

fn train_local(a: TrainLocalArgs) -> Result<()> {
    let data = a.data.load()?;
    let p = client_data(&data, &a.partition)?;
    let models = p
        .client_rows(data.rows.view())
        .iter()
        .enumerate()
        .map(|(c, x)| train_client(x.view(), &a.fit.config(seed::derive(a.seed, &[c as u64]))))
        .collect::<Result<Vec<_>>>()?;
    write_models(&a.out, &models)?;
    let ks: Vec<usize> = models.iter().map(|m| m.params.k()).collect();
    print_json(json!({"clients": models.len(), "components": ks}));
    Ok(())
}

fn aggregate_cmd(a: AggregateArgs) -> Result<()> {
    let clients = read_models(&a.models)?;
    let out = aggregate(
        &clients,
        &AggregationConfig {
            h: a.h,
            global_fit: a.fit.config(seed::derive(a.seed, &[1])),
            seed: seed::derive(a.seed, &[0]),
        },
    )?;
    let n_total = clients.iter().map(|c| c.n_local).sum();
    write_models(&a.out, &[ClientModel::new(out.params, n_total)?])?;
    print_json(json!({
        "synthetic_size": out.stats.synthetic_size,
        "pooled_k": out.stats.pooled_k,
        "report": out.report,
        "ledger": out.ledger,
    }));
    Ok(())
}

fn dem_cmd(a: DemArgs) -> Result<()> {
    let data = a.data.load()?;
    let p = client_data(&data, &a.partition)?;
    let parts = p.client_rows(data.rows.view());
    let views: Vec<_> = parts.iter().map(|x| x.view()).collect();
    let init_scheme = match a.init {
        InitArg::Range => InitScheme::RangeSeparated,
        InitArg::Subset => InitScheme::SubsetPretrain,
        InitArg::Kmeans => InitScheme::FederatedKMeans,
    };
    let out = dem_train(
        &views,
        &DemConfig {
            k: a.k,
            init_scheme,
            cov_type: a.cov_type,
            tol: a.tol,
            max_rounds: a.max_rounds,
            seed: a.seed,
            ..DemConfig::default()
        },
    )?;
    write_models(&a.out, &[ClientModel::new(out.params, data.len())?])?;
    print_json(json!({"rounds": out.rounds, "report": out.report, "ledger": out.ledger}));
    Ok(())
}

fn benchmark_cmd(a: BenchmarkArgs) -> Result<()> {
    let data = a.data.load()?;
    let (params, report) = benchmark_train(data.rows.view(), &a.fit.config(a.seed))?;
    write_models(&a.out, &[ClientModel::new(params, data.len())?])?;
    print_json(json!({"report": report}));
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let models = read_models(&a.model)?;
    let model = models.get(a.index).ok_or_else(|| {
        Error::InvalidInput(format!("model file holds {} records, index {} requested", models.len(), a.index))
    })?;
    let label = a.anomaly_column.as_deref().map(str::parse::<LabelColumn>).transpose()?;
    let data = load_csv_raw(&a.data, label.as_ref())?;
    let gamma = fitness_gamma(&model.params, data.rows.view())?;
    let auc = match label {
        Some(_) => {
            let scores = anomaly_scores(&model.params, data.rows.view())?;
            let labels: Vec<bool> = data.labels.iter().map(|&l| l > 0).collect();
            Some(auc_pr(&scores.to_vec(), &labels)?)
        }
        None => None,
    };
    print_json(json!({"rows": data.len(), "gamma": gamma, "auc_pr": auc}));
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn experiment_cmd(a: ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed_base = s;
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io { path: a.out_dir.clone(), source: e })?;
    let started = unix_now();
    let result = run_scenario(&cfg)?;
    let finished = unix_now();

    emit_results(&result, &a.out_dir.join("results.csv"))?;
    let records = a.out_dir.join("records.csv");
    std::fs::write(&records, records_csv(&result)).map_err(|e| Error::Io { path: records, source: e })?;
    let manifest = json!({
        "config": cfg,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "finished_unix": finished,
        "cells": result.outcomes.len(),
        "missing_cells": result.n_missing(),
    });
    let path = a.out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("serializable"))
        .map_err(|e| Error::Io { path, source: e })?;
    print_json(json!({"cells": result.outcomes.len(), "missing_cells": result.n_missing()}));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Partition(a) => partition_cmd(a),
        Command::TrainLocal(a) => train_local(a),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::Dem(a) => dem_cmd(a),
        Command::Benchmark(a) => benchmark_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
