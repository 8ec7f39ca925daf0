use criterion::{black_box, criterion_group, criterion_main, Criterion};
use fedgengmm::gmm::{e_step, fit_em, FitConfig};
use fedgengmm::one_shot::{aggregate, train_client, AggregationConfig};
use fedgengmm::partition::{gen_mixture_dataset, partition_dirichlet};

fn bench_em(c: &mut Criterion) {
    let (data, truth) = gen_mixture_dataset(5, 8, 5_000, 0.5, 1).unwrap();
    c.bench_function("e_step n=5000 d=8 k=5", |b| {
        b.iter(|| e_step(black_box(&truth), data.rows.view()).unwrap())
    });
    let cfg = FitConfig::fixed_k(5).with_seed(3);
    c.bench_function("fit_em n=5000 d=8 k=5", |b| {
        b.iter(|| fit_em(data.rows.view(), 5, black_box(&cfg)).unwrap())
    });
}

fn bench_aggregate(c: &mut Criterion) {
    let (data, _) = gen_mixture_dataset(5, 8, 5_000, 0.5, 2).unwrap();
    let p = partition_dirichlet(&data, 10, 0.5, 4).unwrap();
    let fit = FitConfig { k_min: 1, k_max: 5, ..FitConfig::default() };
    let clients: Vec<_> = p
        .client_rows(data.rows.view())
        .iter()
        .map(|x| train_client(x.view(), &fit).unwrap())
        .collect();
    let cfg = AggregationConfig {
        global_fit: FitConfig::fixed_k(10),
        ..AggregationConfig::default()
    };
    let mut group = c.benchmark_group("aggregate");
    group.sample_size(10);
    group.bench_function("10 clients h=100", |b| b.iter(|| aggregate(black_box(&clients), &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_em, bench_aggregate);
criterion_main!(benches);
