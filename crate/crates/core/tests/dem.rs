mod common;

use common::{blobs, rng, uniform_matrix};
use fedgengmm::dem::{
    dem_init_range, dem_round, dem_run, dem_train, draw_subset, fed_kmeans, DemConfig, InitScheme,
};
use fedgengmm::eval::fitness_gamma;
use fedgengmm::gmm::{
    e_step, fit_em, log_pdf_rows, m_step, run_em, sample, CovarianceType, Covariances, FitConfig,
    GmmParams,
};
use ndarray::{array, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

fn max_param_diff(a: &GmmParams, b: &GmmParams) -> f64 {
    let mut m = 0.0f64;
    for (x, y) in a.weights().iter().zip(b.weights().iter()) {
        m = m.max((x - y).abs());
    }
    for (x, y) in a.means().iter().zip(b.means().iter()) {
        m = m.max((x - y).abs());
    }
    match (a.covariances(), b.covariances()) {
        (Covariances::Diagonal(x), Covariances::Diagonal(y)) => {
            for (p, q) in x.iter().zip(y.iter()) {
                m = m.max((p - q).abs());
            }
        }
        (Covariances::Full(x), Covariances::Full(y)) => {
            for (p, q) in x.iter().zip(y.iter()) {
                m = m.max((p - q).abs());
            }
        }
        _ => return f64::INFINITY,
    }
    m
}

/// Random split of the rows into `parts` contiguous, shuffled chunks.
fn random_split(data: &Array2<f64>, parts: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut idx: Vec<usize> = (0..data.nrows()).collect();
    let mut r = rng(seed);
    idx.shuffle(&mut r);
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| r.random_range(1..data.nrows())).collect();
    cuts.sort_unstable();
    cuts.insert(0, 0);
    cuts.push(data.nrows());
    cuts.windows(2)
        .map(|w| data.select(ndarray::Axis(0), &idx[w[0]..w[1]]))
        .collect()
}

fn three_blobs(seed: u64) -> Array2<f64> {
    blobs(
        &[vec![0.0, 0.0, 0.0], vec![3.0, 3.0, 0.0], vec![0.0, 4.0, 3.0]],
        1.0,
        &[700, 600, 700],
        seed,
    )
}

fn centralized_iteration(model: &GmmParams, data: ArrayView2<'_, f64>, cov: CovarianceType) -> GmmParams {
    let (resp, _) = e_step(model, data).unwrap();
    m_step(data, resp.view(), cov, 1e-6).unwrap()
}

#[test]
fn dem_round_equals_centralized_iteration() {
    for seed in 0..20u64 {
        let data = three_blobs(seed);
        for cov in [CovarianceType::Diagonal, CovarianceType::Full] {
            let cfg = FitConfig { cov_type: cov, max_iters: 2, ..FitConfig::fixed_k(3) }.with_seed(seed);
            let (start, _) = fit_em(data.view(), 3, &cfg).unwrap();
            let want = centralized_iteration(&start, data.view(), cov);

            let single = dem_round(&start, &[data.view()], 1e-6).unwrap();
            assert!(max_param_diff(&single.params, &want) < 1e-10, "seed {seed} single");

            let parts = random_split(&data, 4, seed + 500);
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            let split = dem_round(&start, &views, 1e-6).unwrap();
            let diff = max_param_diff(&split.params, &want);
            assert!(diff < 1e-10, "seed {seed} {cov}: {diff}");

            let ll = log_pdf_rows(&start, data.view()).unwrap().mean().unwrap();
            assert!((split.avg_loglik - ll).abs() < 1e-10);
        }
    }
}

#[test]
fn dem_rounds_do_not_decrease_likelihood() {
    let data = three_blobs(3);
    let parts = random_split(&data, 5, 9);
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let cfg = DemConfig {
        k: 3,
        init_scheme: InitScheme::RangeSeparated,
        tol: 1e-9,
        max_rounds: 60,
        ..DemConfig::default()
    };
    let init = dem_init_range(3, 3, 2).unwrap();
    let out = dem_run(&views, init, &cfg).unwrap();
    for w in out.report.loglik_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn single_client_dem_matches_run_em() {
    let data = three_blobs(11);
    let init = dem_init_range(3, 3, 5).unwrap();
    let cfg = DemConfig {
        k: 3,
        tol: 1e-6,
        max_rounds: 80,
        ..DemConfig::default()
    };
    let dem = dem_run(&[data.view()], init.clone(), &cfg).unwrap();
    let fit = FitConfig {
        tol: 1e-6,
        max_iters: 80,
        ..FitConfig::fixed_k(3)
    };
    let (em, report) = run_em(data.view(), init, &fit).unwrap();
    assert!(max_param_diff(&dem.params, &em) < 1e-8);
    assert_eq!(dem.report.n_iters, report.n_iters);
    assert!((dem.report.final_avg_loglik - report.final_avg_loglik).abs() < 1e-8);
}

#[test]
fn dem_needs_several_rounds() {
    let data = three_blobs(2);
    let parts = random_split(&data, 5, 1);
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    for scheme in [InitScheme::RangeSeparated, InitScheme::SubsetPretrain, InitScheme::FederatedKMeans] {
        let cfg = DemConfig {
            k: 3,
            init_scheme: scheme,
            seed: 4,
            ..DemConfig::default()
        };
        let out = dem_train(&views, &cfg).unwrap();
        assert!(out.rounds >= 3, "{scheme:?}: {} rounds", out.rounds);
        assert_eq!(out.ledger.client_uploads % 5, 0);
    }
}

#[test]
fn huge_tolerance_stops_after_two_rounds() {
    let data = three_blobs(1);
    let cfg = DemConfig {
        k: 3,
        init_scheme: InitScheme::RangeSeparated,
        tol: 1e9,
        ..DemConfig::default()
    };
    let out = dem_train(&[data.view()], &cfg).unwrap();
    assert_eq!(out.rounds, 2);
    assert!(out.report.converged);
}

#[test]
fn init_traffic_is_counted() {
    let data = three_blobs(5);
    let parts = random_split(&data, 4, 2);
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let run = |scheme| {
        let cfg = DemConfig {
            k: 3,
            init_scheme: scheme,
            max_rounds: 5,
            tol: 1e-12,
            ..DemConfig::default()
        };
        dem_train(&views, &cfg).unwrap()
    };
    assert_eq!(run(InitScheme::RangeSeparated).rounds, 5);
    assert_eq!(run(InitScheme::SubsetPretrain).rounds, 6);
    assert_eq!(run(InitScheme::FederatedKMeans).rounds, 6);
}

#[test]
fn fed_kmeans_recovers_separated_centers() {
    let truth = [vec![0.1, 0.1], vec![0.9, 0.1], vec![0.5, 0.9]];
    let data = blobs(&truth, 0.02, &[300, 300, 300], 7);
    let parts = random_split(&data, 3, 3);
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let out = fed_kmeans(&views, 3, 5).unwrap();
    for t in &truth {
        let best = out
            .centers
            .rows()
            .into_iter()
            .map(|c| ((c[0] - t[0]).powi(2) + (c[1] - t[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.05, "center {t:?} missed by {best}");
    }
}

#[test]
fn fed_kmeans_single_client_with_k_equal_n() {
    let data = array![[0.2, 0.3], [0.7, 0.1], [0.4, 0.9]];
    let out = fed_kmeans(&[data.view()], 3, 0).unwrap();
    let mut got: Vec<Vec<f64>> = out.centers.rows().into_iter().map(|r| r.to_vec()).collect();
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(got, vec![vec![0.2, 0.3], vec![0.4, 0.9], vec![0.7, 0.1]]);
}

#[test]
fn subset_init_finds_three_clusters() {
    let truth = GmmParams::new(
        array![0.3, 0.3, 0.4],
        array![[0.2, 0.2], [0.8, 0.2], [0.5, 0.8]],
        Covariances::Diagonal(array![[0.002, 0.002], [0.002, 0.002], [0.002, 0.002]]),
    )
    .unwrap();
    let data = sample(&truth, 3000, 1).unwrap();
    let parts = random_split(&data, 4, 6);
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let (subset, per_client) = draw_subset(&views, 100, 8).unwrap();
    assert_eq!(subset.nrows(), 100);
    assert_eq!(per_client.iter().sum::<usize>(), 100);
    let cfg = DemConfig {
        k: 3,
        init_scheme: InitScheme::SubsetPretrain,
        max_rounds: 1,
        seed: 8,
        ..DemConfig::default()
    };
    let (init, ledger) = fedgengmm::dem::dem_initialize(&views, &cfg).unwrap();
    assert_eq!(ledger.client_to_server_rounds, 1);
    for t in truth.means().rows() {
        let best = init
            .means()
            .rows()
            .into_iter()
            .map(|c| ((c[0] - t[0]).powi(2) + (c[1] - t[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.2);
    }
}

#[test]
fn range_init_spreads_wider_than_random_points() {
    // Minimum pairwise distance of the chosen centers against that of k
    // uniformly random points, averaged over seeds.
    let min_pair = |m: ArrayView2<'_, f64>| {
        let mut best = f64::INFINITY;
        for i in 0..m.nrows() {
            for j in 0..i {
                let d: f64 = (&m.row(i) - &m.row(j)).mapv(|v| v * v).sum();
                best = best.min(d.sqrt());
            }
        }
        best
    };
    let (k, d) = (5, 3);
    let (mut ours, mut random) = (0.0, 0.0);
    for seed in 0..100 {
        let p = dem_init_range(k, d, seed).unwrap();
        ours += min_pair(p.means());
        random += min_pair(uniform_matrix(k, d, 0.0, 1.0, 10_000 + seed).view());
        assert!(p.means().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(p.covariances().diagonal(0).iter().all(|&v| v == 0.05));
    }
    assert!(ours > 1.5 * random, "range init {ours}, random {random}");
}

#[test]
fn benchmark_matches_analytic_fitness() {
    let truth = GmmParams::new(
        array![0.5, 0.5],
        array![[0.0, 0.0], [10.0, 10.0]],
        Covariances::Diagonal(array![[1.0, 1.0], [1.0, 1.0]]),
    )
    .unwrap();
    let data = sample(&truth, 20_000, 3).unwrap();
    let (model, _) = fedgengmm::dem::benchmark_train(data.view(), &FitConfig::fixed_k(2)).unwrap();
    let gamma = fitness_gamma(&model, data.view()).unwrap();
    // Two far-apart unit Gaussians: -ln 2 + (-(d/2)(1 + ln 2 pi)) nats.
    let analytic = -(2f64).ln() - (1.0 + (2.0 * std::f64::consts::PI).ln());
    assert!((gamma - analytic).abs() < 0.02, "{gamma} vs {analytic}");
}

#[test]
fn bad_configs_rejected() {
    let data = three_blobs(0);
    let zero_k = DemConfig { k: 0, ..DemConfig::default() };
    assert!(dem_train(&[data.view()], &zero_k).is_err());
    let tiny_subset = DemConfig {
        k: 5,
        init_scheme: InitScheme::SubsetPretrain,
        subset_size: 3,
        ..DemConfig::default()
    };
    assert!(dem_train(&[data.view()], &tiny_subset).is_err());
    assert!(dem_train(&[], &DemConfig::default()).is_err());
}
