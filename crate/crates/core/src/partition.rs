//! Synthetic class-structured data, non-IID client partitions and
//! anomaly test-set assembly.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{Covariances, GmmParams};
use crate::seed;

/// Per-feature variance of each generated class before normalization.
pub const CLASS_VARIANCE: f64 = 0.01;
const QUANTITY_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub rows: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledDataset {
    pub fn new(rows: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != rows.nrows() {
            return Err(Error::DimensionMismatch {
                expected: rows.nrows(),
                actual: labels.len(),
            });
        }
        if n_classes == 0 {
            return Err(Error::invalid("a dataset needs at least one class"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            rows,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            rows: self.rows.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Row indices of each class, in row order.
    pub fn class_rows(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Pooled within-class standard deviation per feature.
    pub fn within_class_std(&self) -> Array1<f64> {
        let d = self.dim();
        let mut sums = Array2::<f64>::zeros((self.n_classes, d));
        let mut counts = vec![0usize; self.n_classes];
        for (row, &l) in self.rows.rows().into_iter().zip(&self.labels) {
            sums.row_mut(l).scaled_add(1.0, &row);
            counts[l] += 1;
        }
        let mut ss = Array1::<f64>::zeros(d);
        for (row, &l) in self.rows.rows().into_iter().zip(&self.labels) {
            for j in 0..d {
                let e = row[j] - sums[[l, j]] / counts[l] as f64;
                ss[j] += e * e;
            }
        }
        let dof = (self.len().saturating_sub(counts.iter().filter(|&&c| c > 0).count())).max(1);
        ss.mapv(|v| (v / dof as f64).sqrt())
    }
}

/// Class centers `(m * separation) * 1` with isotropic variance 0.01, min-max
/// normalized to `[0, 1]`. Classes are balanced up to one row. The returned
/// mixture is the generating distribution expressed in normalized
/// coordinates.
pub fn gen_mixture_dataset(
    m_classes: usize,
    d: usize,
    n: usize,
    separation: f64,
    seed: u64,
) -> Result<(LabeledDataset, GmmParams)> {
    if m_classes == 0 || d == 0 || n == 0 {
        return Err(Error::invalid("classes, dimension and size must be at least 1"));
    }
    if !separation.is_finite() {
        return Err(Error::invalid("separation must be finite"));
    }
    let mut rng = seed::rng(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % m_classes).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, CLASS_VARIANCE.sqrt()).expect("valid sd");
    let mut rows = Array2::zeros((n, d));
    for (i, &l) in labels.iter().enumerate() {
        let c = l as f64 * separation;
        for j in 0..d {
            rows[[i, j]] = c + noise.sample(&mut rng);
        }
    }
    let (mins, ranges) = min_max_normalize(&mut rows);

    let counts: Vec<usize> = (0..m_classes).map(|m| labels.iter().filter(|&&l| l == m).count()).collect();
    let weights = Array1::from_iter(counts.iter().map(|&c| c as f64 / n as f64));
    let means = Array2::from_shape_fn((m_classes, d), |(m, j)| {
        if ranges[j] > 0.0 {
            (m as f64 * separation - mins[j]) / ranges[j]
        } else {
            0.0
        }
    });
    let vars = Array2::from_shape_fn((m_classes, d), |(_, j)| {
        if ranges[j] > 0.0 {
            CLASS_VARIANCE / (ranges[j] * ranges[j])
        } else {
            CLASS_VARIANCE
        }
    });
    let truth = GmmParams::new(weights, means, Covariances::Diagonal(vars))?
        .without_zero_weight_components()?;
    Ok((LabeledDataset::new(rows, labels, m_classes)?, truth))
}

/// Maps every column onto `[0, 1]`; constant columns become 0. Returns the
/// per-column minimum and range used.
pub fn min_max_normalize(rows: &mut Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut mins = Vec::with_capacity(rows.ncols());
    let mut ranges = Vec::with_capacity(rows.ncols());
    for mut col in rows.columns_mut() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if range > 0.0 {
            col.mapv_inplace(|v| (v - lo) / range);
        } else {
            col.fill(0.0);
        }
        mins.push(lo);
        ranges.push(range);
    }
    (mins, ranges)
}

/// Row indices held by each client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }

    /// Client of every row; errors unless the assignment is a partition of
    /// `0..n_rows`.
    pub fn client_of_rows(&self, n_rows: usize) -> Result<Vec<usize>> {
        let mut owner = vec![usize::MAX; n_rows];
        for (c, rows) in self.assignments.iter().enumerate() {
            for &r in rows {
                if r >= n_rows {
                    return Err(Error::invalid(format!("row {r} out of range")));
                }
                if owner[r] != usize::MAX {
                    return Err(Error::invalid(format!("row {r} assigned twice")));
                }
                owner[r] = c;
            }
        }
        if let Some(r) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::invalid(format!("row {r} is not assigned")));
        }
        Ok(owner)
    }

    /// Client datasets as owned matrices.
    pub fn client_rows(&self, rows: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        self.assignments
            .iter()
            .map(|idx| rows.select(Axis(0), idx))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    Dirichlet { alpha: f64 },
    Quantity { alpha: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub n_clients: usize,
    pub seed: u64,
}

pub fn partition(data: &LabeledDataset, spec: &PartitionSpec) -> Result<Partition> {
    match spec.scheme {
        PartitionScheme::Dirichlet { alpha } => partition_dirichlet(data, spec.n_clients, alpha, spec.seed),
        PartitionScheme::Quantity { alpha } => partition_quantity(data, spec.n_clients, alpha, spec.seed),
    }
}

/// Splits `total` proportionally to `p` by largest remainders (ties to the
/// lower index).
pub(crate) fn largest_remainder(p: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = p.iter().sum();
    let exact: Vec<f64> = p.iter().map(|v| v / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Moves single rows from the largest client to empty ones.
fn fill_empty_clients(assignments: &mut [Vec<usize>]) {
    while let Some(empty) = assignments.iter().position(|a| a.is_empty()) {
        let largest = (0..assignments.len())
            .max_by(|&a, &b| assignments[a].len().cmp(&assignments[b].len()).then(b.cmp(&a)))
            .expect("at least one client");
        if assignments[largest].len() <= 1 {
            return;
        }
        let row = assignments[largest].pop().expect("non-empty");
        assignments[empty].push(row);
    }
}

fn check_clients(data: &LabeledDataset, n_clients: usize) -> Result<()> {
    if n_clients == 0 {
        return Err(Error::invalid("at least one client is required"));
    }
    if n_clients > data.len() {
        return Err(Error::invalid(format!(
            "{n_clients} clients cannot each hold a row of a {}-row dataset",
            data.len()
        )));
    }
    Ok(())
}

fn dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|g| g / total).collect()
    } else {
        // Every gamma draw underflowed: the limit is a single-client split.
        let mut one_hot = vec![0.0; n];
        one_hot[rng.random_range(0..n)] = 1.0;
        one_hot
    }
}

/// For every class, a symmetric Dirichlet(alpha) vector over clients decides
/// how that class's rows are split. Every client ends with at least one row.
pub fn partition_dirichlet(
    data: &LabeledDataset,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    check_clients(data, n_clients)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("Dirichlet alpha must be positive, got {alpha}")));
    }
    let mut rng = seed::rng(seed);
    let mut assignments = vec![Vec::new(); n_clients];
    for mut rows in data.class_rows() {
        let p = dirichlet(alpha, n_clients, &mut rng);
        if rows.is_empty() {
            continue;
        }
        rows.shuffle(&mut rng);
        let counts = largest_remainder(&p, rows.len());
        let mut start = 0;
        for (c, cnt) in counts.into_iter().enumerate() {
            assignments[c].extend_from_slice(&rows[start..start + cnt]);
            start += cnt;
        }
    }
    fill_empty_clients(&mut assignments);
    assignments.iter_mut().for_each(|a| a.sort_unstable());
    Ok(Partition { assignments })
}

/// Each client draws `alpha` distinct classes; draws are repeated until every
/// class has a holder. Each class's rows are split evenly among its holders.
pub fn partition_quantity(
    data: &LabeledDataset,
    n_clients: usize,
    alpha: usize,
    seed: u64,
) -> Result<Partition> {
    check_clients(data, n_clients)?;
    let m = data.n_classes;
    if alpha < 1 || alpha > m {
        return Err(Error::invalid(format!(
            "quantity alpha must lie in [1, {m}], got {alpha}"
        )));
    }
    if n_clients * alpha < m {
        return Err(Error::invalid(format!(
            "{n_clients} clients holding {alpha} classes each cannot cover {m} classes"
        )));
    }
    let mut rng = seed::rng(seed);
    let draw = |rng: &mut seed::Rng| -> Vec<Vec<usize>> {
        (0..n_clients)
            .map(|_| {
                let mut v = index::sample(rng, m, alpha).into_vec();
                v.sort_unstable();
                v
            })
            .collect()
    };
    let covered = |held: &[Vec<usize>]| {
        let mut seen = vec![false; m];
        held.iter().flatten().for_each(|&c| seen[c] = true);
        seen
    };
    let mut held = draw(&mut rng);
    for _ in 0..QUANTITY_REDRAWS {
        if covered(&held).iter().all(|&s| s) {
            break;
        }
        held = draw(&mut rng);
    }
    // Repair if redraws did not cover every class: swap an uncovered class in
    // for a class that has another holder.
    loop {
        let seen = covered(&held);
        let Some(missing) = seen.iter().position(|&s| !s) else { break };
        let mut holders = vec![0usize; m];
        held.iter().flatten().for_each(|&c| holders[c] += 1);
        let candidates: Vec<(usize, usize)> = held
            .iter()
            .enumerate()
            .flat_map(|(ci, cls)| {
                cls.iter()
                    .enumerate()
                    .filter(|(_, &c)| holders[c] > 1)
                    .map(move |(slot, _)| (ci, slot))
            })
            .collect();
        let (ci, slot) = candidates[rng.random_range(0..candidates.len())];
        held[ci][slot] = missing;
        held[ci].sort_unstable();
    }

    let mut assignments = vec![Vec::new(); n_clients];
    for (class, mut rows) in data.class_rows().into_iter().enumerate() {
        let holders: Vec<usize> = (0..n_clients).filter(|&c| held[c].contains(&class)).collect();
        rows.shuffle(&mut rng);
        let counts = largest_remainder(&vec![1.0; holders.len()], rows.len());
        let mut start = 0;
        for (&c, cnt) in holders.iter().zip(counts) {
            assignments[c].extend_from_slice(&rows[start..start + cnt]);
            start += cnt;
        }
    }
    fill_empty_clients(&mut assignments);
    assignments.iter_mut().for_each(|a| a.sort_unstable());
    Ok(Partition { assignments })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodKind {
    AdditiveGaussian { variance: f64 },
    MixtureShift { delta: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSpec {
    pub kind: OodKind,
    pub anomaly_ratio: f64,
}

impl OodSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.anomaly_ratio > 0.0 && self.anomaly_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "anomaly ratio must lie in (0, 1), got {}",
                self.anomaly_ratio
            )));
        }
        match &self.kind {
            OodKind::AdditiveGaussian { variance } if !(*variance > 0.0) || !variance.is_finite() => {
                Err(Error::invalid("OOD noise variance must be positive"))
            }
            OodKind::MixtureShift { delta } if delta.iter().any(|v| !v.is_finite()) => {
                Err(Error::invalid("OOD shift must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Shift of `n_sd` standard deviations per feature with alternating sign,
/// so the displacement is orthogonal to the all-ones direction when `d` is
/// even.
pub fn alternating_shift(std: &Array1<f64>, n_sd: f64) -> Vec<f64> {
    std.iter()
        .enumerate()
        .map(|(j, s)| if j % 2 == 0 { n_sd * s } else { -n_sd * s })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyTestSet {
    pub rows: Array2<f64>,
    /// `true` marks an OOD row.
    pub labels: Vec<bool>,
    /// Index in the inlier pool each row was taken from.
    pub source_rows: Vec<usize>,
}

/// Draws `n_test` rows from the inlier pool (without replacement when the
/// pool is large enough) and perturbs `round(ratio * n_test)` of them,
/// clipping to `[0, 1]`.
pub fn build_anomaly_testset(
    inliers: ArrayView2<'_, f64>,
    ood: &OodSpec,
    n_test: usize,
    seed: u64,
) -> Result<AnomalyTestSet> {
    ood.validate()?;
    if n_test == 0 {
        return Err(Error::invalid("test set size must be at least 1"));
    }
    if inliers.nrows() == 0 {
        return Err(Error::invalid("inlier pool is empty"));
    }
    let d = inliers.ncols();
    if let OodKind::MixtureShift { delta } = &ood.kind {
        if delta.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: delta.len(),
            });
        }
    }
    let mut rng = seed::rng(seed);
    let source_rows: Vec<usize> = if n_test <= inliers.nrows() {
        index::sample(&mut rng, inliers.nrows(), n_test).into_vec()
    } else {
        (0..n_test).map(|_| rng.random_range(0..inliers.nrows())).collect()
    };
    let n_anom = (ood.anomaly_ratio * n_test as f64).round() as usize;
    let mut labels = vec![false; n_test];
    for i in index::sample(&mut rng, n_test, n_anom) {
        labels[i] = true;
    }
    let mut rows = inliers.select(Axis(0), &source_rows);
    let anom: Vec<usize> = (0..n_test).filter(|&i| labels[i]).collect();
    let perturbed = perturb(rows.select(Axis(0), &anom), ood, &mut rng)?;
    for (src, &i) in perturbed.rows().into_iter().zip(&anom) {
        rows.row_mut(i).assign(&src);
    }
    Ok(AnomalyTestSet {
        rows,
        labels,
        source_rows,
    })
}

/// Test set built from two disjoint pools: `n_test - round(ratio * n_test)`
/// untouched rows from `inliers` and `round(ratio * n_test)` perturbed rows
/// from `ood_source`, in random order. Rows are drawn without replacement
/// whenever the pool is large enough. `source_rows` index into `inliers` for
/// inlier rows and into `ood_source` for anomalies.
pub fn build_split_testset(
    inliers: ArrayView2<'_, f64>,
    ood_source: ArrayView2<'_, f64>,
    ood: &OodSpec,
    n_test: usize,
    seed: u64,
) -> Result<AnomalyTestSet> {
    ood.validate()?;
    if n_test == 0 {
        return Err(Error::invalid("test set size must be at least 1"));
    }
    let n_anom = (ood.anomaly_ratio * n_test as f64).round() as usize;
    let n_in = n_test - n_anom;
    if (n_in > 0 && inliers.nrows() == 0) || (n_anom > 0 && ood_source.nrows() == 0) {
        return Err(Error::invalid("a test-set pool is empty"));
    }
    if ood_source.ncols() != inliers.ncols() {
        return Err(Error::DimensionMismatch {
            expected: inliers.ncols(),
            actual: ood_source.ncols(),
        });
    }
    let mut rng = seed::rng(seed);
    let draw = |pool: usize, m: usize, rng: &mut seed::Rng| -> Vec<usize> {
        if m <= pool {
            index::sample(rng, pool, m).into_vec()
        } else {
            (0..m).map(|_| rng.random_range(0..pool)).collect()
        }
    };
    let in_rows = draw(inliers.nrows(), n_in, &mut rng);
    let anom_rows = draw(ood_source.nrows(), n_anom, &mut rng);
    let mut labels = vec![false; n_test];
    for i in index::sample(&mut rng, n_test, n_anom) {
        labels[i] = true;
    }
    let perturbed = perturb(ood_source.select(Axis(0), &anom_rows), ood, &mut rng)?;
    let mut rows = Array2::zeros((n_test, inliers.ncols()));
    let mut source_rows = Vec::with_capacity(n_test);
    let (mut next_in, mut next_anom) = (0, 0);
    for (i, &anom) in labels.iter().enumerate() {
        if anom {
            rows.row_mut(i).assign(&perturbed.row(next_anom));
            source_rows.push(anom_rows[next_anom]);
            next_anom += 1;
        } else {
            rows.row_mut(i).assign(&inliers.row(in_rows[next_in]));
            source_rows.push(in_rows[next_in]);
            next_in += 1;
        }
    }
    Ok(AnomalyTestSet {
        rows,
        labels,
        source_rows,
    })
}

/// Applies the OOD transform to every row and clips to `[0, 1]`.
pub fn perturb<R: Rng + ?Sized>(mut rows: Array2<f64>, ood: &OodSpec, rng: &mut R) -> Result<Array2<f64>> {
    match &ood.kind {
        OodKind::AdditiveGaussian { variance } => {
            let noise = Normal::new(0.0, variance.sqrt())
                .map_err(|e| Error::invalid(format!("OOD noise: {e}")))?;
            rows.mapv_inplace(|v| v + noise.sample(rng));
        }
        OodKind::MixtureShift { delta } => {
            if delta.len() != rows.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: rows.ncols(),
                    actual: delta.len(),
                });
            }
            for mut row in rows.rows_mut() {
                row.iter_mut().zip(delta).for_each(|(v, s)| *v += s);
            }
        }
    }
    rows.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(rows)
}
