use fedgengmm::partition::{
    alternating_shift, build_anomaly_testset, gen_mixture_dataset, partition, partition_dirichlet,
    partition_quantity, LabeledDataset, OodKind, OodSpec, Partition, PartitionScheme, PartitionSpec,
};
use proptest::prelude::*;

fn is_partition(p: &Partition, n: usize) -> bool {
    p.client_of_rows(n).is_ok() && p.assignments.iter().all(|a| !a.is_empty())
}

fn distinct_labels(data: &LabeledDataset, rows: &[usize]) -> usize {
    let mut seen = vec![false; data.n_classes];
    rows.iter().for_each(|&r| seen[data.labels[r]] = true);
    seen.iter().filter(|&&s| s).count()
}

#[test]
fn generated_classes_match_their_centers() {
    let (m, d, n) = (4, 3, 8000);
    let (data, truth) = gen_mixture_dataset(m, d, n, 1.0, 5).unwrap();
    assert!(data.rows.iter().all(|&v| (0.0..=1.0).contains(&v)));
    for (class, rows) in data.class_rows().iter().enumerate() {
        let sub = data.rows.select(ndarray::Axis(0), rows);
        let mean = sub.mean_axis(ndarray::Axis(0)).unwrap();
        let var = sub.var_axis(ndarray::Axis(0), 1.0);
        for j in 0..d {
            let sd = truth.covariances().diagonal(class)[j].sqrt();
            let bound = 4.0 * sd / (rows.len() as f64).sqrt();
            assert!((mean[j] - truth.means()[[class, j]]).abs() < bound);
            let rel = var[j] / truth.covariances().diagonal(class)[j];
            assert!((rel - 1.0).abs() < 0.1, "variance ratio {rel}");
        }
    }
    // Back in raw units the class variance is 0.01: the normalized spacing
    // of consecutive centers is separation / range.
    let spacing = truth.means()[[1, 0]] - truth.means()[[0, 0]];
    let range = 1.0 / spacing;
    let raw_var = truth.covariances().diagonal(0)[0] * range * range;
    assert!((raw_var - 0.01).abs() < 1e-12);
}

#[test]
fn dirichlet_concentrates_classes_at_small_alpha() {
    let (data, _) = gen_mixture_dataset(10, 2, 5000, 1.0, 0).unwrap();
    let mut shares = Vec::new();
    for seed in 0..20 {
        let p = partition_dirichlet(&data, 10, 0.1, seed).unwrap();
        assert!(is_partition(&p, data.len()));
        for class in 0..10 {
            let mut counts: Vec<usize> = p
                .assignments
                .iter()
                .map(|rows| rows.iter().filter(|&&r| data.labels[r] == class).count())
                .collect();
            counts.sort_unstable_by(|a, b| b.cmp(a));
            let total: usize = counts.iter().sum();
            shares.push((counts[0] + counts[1]) as f64 / total as f64);
        }
    }
    shares.sort_by(f64::total_cmp);
    let median = 0.5 * (shares[99] + shares[100]);
    assert!(median >= 0.8, "median top-2 share {median}");
}

#[test]
fn dirichlet_mean_proportion_is_uniform() {
    let (data, _) = gen_mixture_dataset(2, 1, 2000, 1.0, 3).unwrap();
    let n_clients = 5;
    let draws = 300;
    let mut props = vec![Vec::new(); n_clients];
    for seed in 0..draws as u64 {
        let p = partition_dirichlet(&data, n_clients, 0.5, seed).unwrap();
        let class0: usize = data.labels.iter().filter(|&&l| l == 0).count();
        for (c, rows) in p.assignments.iter().enumerate() {
            let k = rows.iter().filter(|&&r| data.labels[r] == 0).count();
            props[c].push(k as f64 / class0 as f64);
        }
    }
    for p in props {
        let mean = p.iter().sum::<f64>() / draws as f64;
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((mean - 0.2).abs() < 3.0 * se, "mean {mean}, se {se}");
    }
}

#[test]
fn quantity_all_classes_splits_evenly() {
    let (data, _) = gen_mixture_dataset(3, 2, 900, 1.0, 1).unwrap();
    let p = partition_quantity(&data, 4, 3, 2).unwrap();
    assert!(is_partition(&p, data.len()));
    for (class, rows) in data.class_rows().iter().enumerate() {
        let even = rows.len() as f64 / 4.0;
        for client in &p.assignments {
            let k = client.iter().filter(|&&r| data.labels[r] == class).count() as f64;
            assert!((k - even).abs() <= 1.0);
        }
    }
}

#[test]
fn quantity_one_class_per_client() {
    let (data, _) = gen_mixture_dataset(5, 2, 1000, 1.0, 1).unwrap();
    for seed in 0..10 {
        let p = partition_quantity(&data, 8, 1, seed).unwrap();
        assert!(p.assignments.iter().all(|rows| distinct_labels(&data, rows) == 1));
    }
}

#[test]
fn quantity_two_of_three_for_twelve_clients() {
    let (data, _) = gen_mixture_dataset(3, 4, 3000, 1.0, 9).unwrap();
    for seed in 0..10 {
        let p = partition_quantity(&data, 12, 2, seed).unwrap();
        assert!(is_partition(&p, data.len()));
        assert!(p.assignments.iter().all(|rows| distinct_labels(&data, rows) == 2));
    }
}

#[test]
fn quantity_covers_every_class_even_when_tight() {
    // Two clients holding one class each must end up covering both classes.
    let (data, _) = gen_mixture_dataset(2, 1, 40, 1.0, 0).unwrap();
    for seed in 0..50 {
        let p = partition_quantity(&data, 2, 1, seed).unwrap();
        let held: Vec<usize> = p.assignments.iter().map(|r| data.labels[r[0]]).collect();
        assert_ne!(held[0], held[1]);
    }
}

#[test]
fn anomaly_testset_construction() {
    let (data, _) = gen_mixture_dataset(3, 4, 600, 1.0, 2).unwrap();
    let shift = alternating_shift(&data.within_class_std(), 5.0);
    let spec = OodSpec {
        kind: OodKind::MixtureShift { delta: shift.clone() },
        anomaly_ratio: 0.1,
    };
    let set = build_anomaly_testset(data.rows.view(), &spec, 333, 4).unwrap();
    assert_eq!(set.rows.nrows(), 333);
    assert_eq!(set.labels.iter().filter(|&&l| l).count(), 33);
    assert!(set.rows.iter().all(|&v| (0.0..=1.0).contains(&v)));
    for ((row, &src), &anom) in set.rows.rows().into_iter().zip(&set.source_rows).zip(&set.labels) {
        let orig = data.rows.row(src);
        for j in 0..4 {
            let want = if anom { (orig[j] + shift[j]).clamp(0.0, 1.0) } else { orig[j] };
            assert_eq!(row[j], want);
        }
    }

    let noisy = OodSpec {
        kind: OodKind::AdditiveGaussian { variance: 0.005 },
        anomaly_ratio: 0.25,
    };
    let set = build_anomaly_testset(data.rows.view(), &noisy, 1000, 4).unwrap();
    assert_eq!(set.labels.iter().filter(|&&l| l).count(), 250);
    assert!(set.rows.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn alternating_shift_signs() {
    let s = alternating_shift(&ndarray::array![0.1, 0.2, 0.3], 2.0);
    assert_eq!(s, vec![2.0 * 0.1, -2.0 * 0.2, 2.0 * 0.3]);
}

#[test]
fn partitions_are_deterministic() {
    let (data, _) = gen_mixture_dataset(4, 2, 500, 1.0, 1).unwrap();
    for scheme in [PartitionScheme::Dirichlet { alpha: 0.3 }, PartitionScheme::Quantity { alpha: 2 }] {
        let spec = PartitionSpec { scheme, n_clients: 7, seed: 12 };
        assert_eq!(partition(&data, &spec).unwrap(), partition(&data, &spec).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dirichlet_partitions_cover_rows(
        n in 20usize..400,
        m in 1usize..6,
        clients in 1usize..20,
        alpha in 0.01f64..5.0,
        seed in 0u64..1000,
    ) {
        let (data, _) = gen_mixture_dataset(m, 2, n, 1.0, seed).unwrap();
        let p = partition_dirichlet(&data, clients, alpha, seed).unwrap();
        prop_assert!(is_partition(&p, n));
        prop_assert_eq!(p.n_clients(), clients);
    }

    #[test]
    fn quantity_partitions_cover_rows(
        n in 50usize..400,
        m in 1usize..6,
        clients in 1usize..15,
        seed in 0u64..1000,
        alpha_frac in 0.0f64..1.0,
    ) {
        let alpha = 1 + ((m - 1) as f64 * alpha_frac) as usize;
        prop_assume!(clients * alpha >= m);
        // Every holder of a class must be able to get at least one of its rows.
        prop_assume!(n / m > clients);
        let (data, _) = gen_mixture_dataset(m, 2, n, 1.0, seed).unwrap();
        let p = partition_quantity(&data, clients, alpha, seed).unwrap();
        prop_assert!(is_partition(&p, n));
        let mut covered = vec![false; m];
        for rows in &p.assignments {
            prop_assert_eq!(distinct_labels(&data, rows), alpha);
            rows.iter().for_each(|&r| covered[data.labels[r]] = true);
        }
        prop_assert!(covered.iter().all(|&c| c));
    }
}
