//! Clustering evaluation against ground truth: NMI, ARI, Hungarian-matched
//! accuracy, mean per-cluster entropy and mean maximal purity. All entropies
//! are in nats; the CLI layer is responsible for percentage rendering.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Hard cluster assignments over a declared label space `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    labels: Vec<usize>,
    k: usize,
}

impl Labeling {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("labeling must cover at least one item"));
        }
        if k == 0 {
            return Err(Error::invalid("label-space size must be at least 1"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range 0..{k}")));
        }
        Ok(Labeling { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Per-cluster item counts over the declared label space.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.k];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Read one non-negative integer per line; the label space is the
    /// smallest `0..k` containing every label.
    pub fn read_from(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut labels = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let v: usize = t.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("cannot parse label `{t}`"),
            })?;
            labels.push(v);
        }
        if labels.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                msg: "label file is empty".into(),
            });
        }
        let k = labels.iter().max().copied().unwrap_or(0) + 1;
        Labeling::new(labels, k)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.labels.len() * 4);
        for l in &self.labels {
            out.push_str(&l.to_string());
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Co-occurrence counts between predicted and true clusters.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    n: u64,
}

impl ContingencyTable {
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k_pred(&self) -> usize {
        self.counts.len()
    }

    pub fn k_true(&self) -> usize {
        self.counts.first().map_or(0, |r| r.len())
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.k_true()];
        for row in &self.counts {
            for (s, &c) in sums.iter_mut().zip(row) {
                *s += c;
            }
        }
        sums
    }
}

pub fn contingency(pred: &Labeling, truth: &Labeling) -> Result<ContingencyTable> {
    if pred.n() != truth.n() {
        return Err(Error::shape(format!(
            "labelings cover {} vs {} items",
            pred.n(),
            truth.n()
        )));
    }
    let mut counts = vec![vec![0u64; truth.k()]; pred.k()];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        counts[p][t] += 1;
    }
    Ok(ContingencyTable {
        counts,
        n: pred.n() as u64,
    })
}

fn entropy_of(counts: &[u64], n: u64) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// True when both labelings induce the same partition of the items, i.e.
/// the contingency table has at most one non-zero cell per row and column.
fn identical_partitions(table: &ContingencyTable) -> bool {
    let mut col_hit = vec![false; table.k_true()];
    for row in table.counts() {
        let mut row_hits = 0;
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                row_hits += 1;
                if row_hits > 1 || col_hit[j] {
                    return false;
                }
                col_hit[j] = true;
            }
        }
    }
    true
}

/// Normalized mutual information, `MI / (0.5 H(U) + 0.5 H(V))`, in `[0, 1]`.
///
/// Degenerate denominators: if both entropies are zero the labelings are
/// scored 1.0 when they induce identical partitions and 0.0 otherwise; a
/// single zero entropy forces MI = 0 and scores 0.0.
pub fn nmi(pred: &Labeling, truth: &Labeling) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let h_u = entropy_of(&rows, table.n());
    let h_v = entropy_of(&cols, table.n());
    if h_u <= 0.0 && h_v <= 0.0 {
        return Ok(if identical_partitions(&table) { 1.0 } else { 0.0 });
    }
    if h_u <= 0.0 || h_v <= 0.0 {
        return Ok(0.0);
    }
    let n = table.n() as f64;
    let mut mi = 0.0;
    for (i, row) in table.counts().iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let pij = c as f64 / n;
                mi += pij * ((c as f64 * n) / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (0.5 * h_u + 0.5 * h_v)).clamp(0.0, 1.0))
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index via pair counting, in `[-1, 1]`. The degenerate
/// denominator (both labelings trivial in the same way) scores 1.0.
pub fn ari(pred: &Labeling, truth: &Labeling) -> Result<f64> {
    if pred.n() < 2 {
        return Err(Error::invalid("ARI needs at least two items"));
    }
    let table = contingency(pred, truth)?;
    let sum_cells: f64 = table
        .counts()
        .iter()
        .flat_map(|r| r.iter())
        .map(|&c| comb2(c))
        .sum();
    let sum_rows: f64 = table.row_sums().iter().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = table.col_sums().iter().map(|&c| comb2(c)).sum();
    let total = comb2(table.n());
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok(((sum_cells - expected) / denom).clamp(-1.0, 1.0))
}

/// A (possibly partial) assignment of predicted clusters to true clusters.
/// `None` marks predicted clusters matched to a padding column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching(pub Vec<Option<usize>>);

impl Matching {
    /// The matched (pred, truth) pairs.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|j| (i, j)))
            .collect()
    }
}

/// Accuracy after the optimal bijective matching of predicted to true
/// clusters (Kuhn-Munkres on the contingency table, padded square with
/// zeros when the cluster counts differ).
pub fn hungarian_accuracy(pred: &Labeling, truth: &Labeling) -> Result<(f64, Matching)> {
    let table = contingency(pred, truth)?;
    let (kp, kt) = (table.k_pred(), table.k_true());
    let dim = kp.max(kt);
    let mut cost = vec![vec![0.0f64; dim]; dim];
    for (i, row) in table.counts().iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            cost[i][j] = -(c as f64);
        }
    }
    let assignment = min_cost_assignment(&cost);
    let mut matched_mass = 0u64;
    let mut matching = vec![None; kp];
    for (i, &j) in assignment.iter().enumerate().take(kp) {
        if j < kt {
            matching[i] = Some(j);
            matched_mass += table.counts()[i][j];
        }
    }
    Ok((matched_mass as f64 / table.n() as f64, Matching(matching)))
}

/// Mean over declared predicted clusters of the entropy (nats) of the
/// ground-truth distribution inside the cluster; empty clusters contribute 0.
pub fn mean_cluster_entropy(pred: &Labeling, truth: &Labeling) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let mut total = 0.0;
    for row in table.counts() {
        let n_k: u64 = row.iter().sum();
        if n_k > 0 {
            total += entropy_of(row, n_k);
        }
    }
    Ok(total / pred.k() as f64)
}

/// Mean over declared predicted clusters of the dominant ground-truth
/// fraction inside the cluster; empty clusters contribute chance `1/k_true`.
pub fn mean_max_purity(pred: &Labeling, truth: &Labeling) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let chance = 1.0 / truth.k() as f64;
    let mut total = 0.0;
    for row in table.counts() {
        let n_k: u64 = row.iter().sum();
        if n_k > 0 {
            let max = row.iter().max().copied().unwrap_or(0);
            total += max as f64 / n_k as f64;
        } else {
            total += chance;
        }
    }
    Ok(total / pred.k() as f64)
}

/// Minimum-cost perfect assignment on a square cost matrix via the O(n^3)
/// potentials formulation of the Hungarian algorithm. Returns the column
/// assigned to each row.
fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // row matched to column j, 1-based; 0 = free
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            out[matched_row[j] - 1] = j - 1;
        }
    }
    out
}
