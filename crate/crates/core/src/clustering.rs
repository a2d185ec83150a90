//! Agglomerative clustering over a precomputed distance matrix, cluster
//! cuts, and the contingency-table statistics used to score a clustering
//! against known labels.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distances::DistanceMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

impl Linkage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Linkage::Average => "average",
            Linkage::Complete => "complete",
            Linkage::Single => "single",
        }
    }

    /// Lance–Williams update for the distance from the merge of `i` and `j`
    /// (sizes `ni`, `nj`) to a third cluster.
    fn update(&self, d_ik: f64, d_jk: f64, ni: usize, nj: usize) -> f64 {
        match self {
            Linkage::Average => (ni as f64 * d_ik + nj as f64 * d_jk) / (ni + nj) as f64,
            Linkage::Complete => d_ik.max(d_jk),
            Linkage::Single => d_ik.min(d_jk),
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            _ => Err(Error::input(format!("unknown linkage '{s}'"))),
        }
    }
}

/// One agglomeration step. Leaves are nodes `0..n`; the node created by
/// step `t` is `n + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub linkage: Linkage,
    pub merges: Vec<Merge>,
}

/// Agglomerates with the given linkage. Among equally close pairs the one
/// with the lexicographically smallest (slot, slot) wins, where a cluster's
/// slot is its smallest leaf index.
pub fn agglomerate(d: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    let n = d.len();
    if n < 2 {
        return Err(Error::input("clustering needs at least two items"));
    }
    if d.values.iter().any(|v| v.is_nan()) {
        return Err(Error::input("distance matrix contains NaN"));
    }
    // Upper triangle in a flat buffer; dist[i][j] valid for i < j.
    let mut dist: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| d.get(i.min(j), i.max(j))).collect()).collect();
    let mut active = vec![true; n];
    let mut node = (0..n).collect::<Vec<_>>();
    let mut size = vec![1usize; n];
    // Row minimum over j > i among active slots: (value, j).
    let row_min = |dist: &Vec<Vec<f64>>, active: &Vec<bool>, i: usize| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in (i + 1)..n {
            if active[j] && best.is_none_or(|(v, _)| dist[i][j] < v) {
                best = Some((dist[i][j], j));
            }
        }
        best
    };
    let mut mins: Vec<Option<(f64, usize)>> = (0..n).map(|i| row_min(&dist, &active, i)).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..(n - 1) {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((v, j)) = mins[i] {
                if pick.is_none_or(|(pv, _, _)| v < pv) {
                    pick = Some((v, i, j));
                }
            }
        }
        let (height, i, j) = pick.expect("at least two active clusters remain");
        let (ni, nj) = (size[i], size[j]);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let d_ik = dist[i.min(k)][i.max(k)];
            let d_jk = dist[j.min(k)][j.max(k)];
            let v = linkage.update(d_ik, d_jk, ni, nj);
            dist[i.min(k)][i.max(k)] = v;
        }
        active[j] = false;
        merges.push(Merge {
            left: node[i],
            right: node[j],
            height,
            size: ni + nj,
        });
        node[i] = n + step;
        size[i] = ni + nj;

        // Refresh row minima that may have changed.
        for k in 0..n {
            if !active[k] {
                continue;
            }
            let stale = match mins[k] {
                None => false,
                Some((_, target)) => k == i || target == i || target == j,
            };
            if stale {
                mins[k] = row_min(&dist, &active, k);
            } else if k < i {
                let v = dist[k][i];
                if let Some((cur, target)) = mins[k] {
                    if v < cur || (v == cur && i < target) {
                        mins[k] = Some((v, i));
                    }
                }
            }
        }
    }
    Ok(Dendrogram { leaves: n, linkage, merges })
}

impl Dendrogram {
    /// Leaf order for plotting: left subtree before right subtree.
    pub fn leaf_order(&self) -> Vec<usize> {
        let n = self.leaves;
        if self.merges.is_empty() {
            return (0..n).collect();
        }
        let mut out = Vec::with_capacity(n);
        let mut stack = vec![n + self.merges.len() - 1];
        while let Some(id) = stack.pop() {
            if id < n {
                out.push(id);
            } else {
                let m = &self.merges[id - n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dendrogram serializes")
    }
}

/// Cuts the dendrogram into `k` clusters by undoing its last `k − 1`
/// merges. Clusters are numbered by size descending, ties broken by the
/// smallest leaf index they contain.
pub fn cut(t: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = t.leaves;
    if k == 0 || k > n {
        return Err(Error::input(format!("cannot cut {n} leaves into {k} clusters")));
    }
    let mut parent: Vec<usize> = (0..(2 * n)).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (step, m) in t.merges.iter().take(n - k).enumerate() {
        let id = n + step;
        let (a, b) = (find(&mut parent, m.left), find(&mut parent, m.right));
        parent[a] = id;
        parent[b] = id;
    }
    let roots: Vec<usize> = (0..n).map(|leaf| find(&mut parent, leaf)).collect();
    let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (leaf, r) in roots.iter().enumerate() {
        let e = groups.entry(*r).or_insert((0, leaf));
        e.0 += 1;
    }
    let mut order: Vec<(usize, (usize, usize))> = groups.into_iter().collect();
    order.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    let label_of: BTreeMap<usize, usize> = order.iter().enumerate().map(|(lbl, (root, _))| (*root, lbl)).collect();
    Ok(roots.iter().map(|r| label_of[r]).collect())
}

/// Cluster-versus-class counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map(|r| r.len()).unwrap_or(0);
        if counts.is_empty() || cols == 0 || counts.iter().any(|r| r.len() != cols) {
            return Err(Error::input("contingency counts must be a non-empty rectangle"));
        }
        Ok(ContingencyTable {
            row_labels: (0..counts.len()).map(|i| i.to_string()).collect(),
            col_labels: (0..cols).map(|j| j.to_string()).collect(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.col_labels.len()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn transpose(&self) -> ContingencyTable {
        ContingencyTable {
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            counts: (0..self.col_labels.len())
                .map(|j| self.counts.iter().map(|r| r[j]).collect())
                .collect(),
        }
    }
}

/// Counts co-occurrences of cluster labels and true classes. Rows and
/// columns follow the sorted distinct values.
pub fn contingency<A, B>(labels: &[A], truth: &[B]) -> Result<ContingencyTable>
where
    A: Ord + Clone + ToString,
    B: Ord + Clone + ToString,
{
    if labels.len() != truth.len() {
        return Err(Error::input(format!(
            "{} labels but {} truth values",
            labels.len(),
            truth.len()
        )));
    }
    let rows: BTreeMap<A, usize> = labels.iter().cloned().map(|l| (l, 0)).collect();
    let cols: BTreeMap<B, usize> = truth.iter().cloned().map(|t| (t, 0)).collect();
    let rows: BTreeMap<A, usize> = rows.into_keys().enumerate().map(|(i, k)| (k, i)).collect();
    let cols: BTreeMap<B, usize> = cols.into_keys().enumerate().map(|(i, k)| (k, i)).collect();
    let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
    for (l, t) in labels.iter().zip(truth) {
        counts[rows[l]][cols[t]] += 1;
    }
    Ok(ContingencyTable {
        row_labels: rows.keys().map(|k| k.to_string()).collect(),
        col_labels: cols.keys().map(|k| k.to_string()).collect(),
        counts,
    })
}

/// Pearson's χ² = Σ (O − E)² / E with E = row total × column total / N.
/// No continuity correction.
pub fn chi_square(t: &ContingencyTable) -> Result<f64> {
    let rows = t.row_totals();
    let cols = t.col_totals();
    if rows.contains(&0) || cols.contains(&0) {
        return Err(Error::input("contingency table has an empty row or column"));
    }
    let total = t.total() as f64;
    let mut stat = 0.0;
    for (i, r) in t.counts.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            let e = rows[i] as f64 * cols[j] as f64 / total;
            let diff = o as f64 - e;
            stat += diff * diff / e;
        }
    }
    Ok(stat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRates {
    /// Fraction of the positive ("noisy") class that landed in the positive cluster.
    pub noisy_rate: f64,
    /// Fraction of the other class that landed in the other cluster.
    pub clean_rate: f64,
    pub overall: f64,
}

/// Rates for a 2×2 table given which row is the predicted-positive cluster
/// and which column is the positive class.
pub fn prediction_rates(t: &ContingencyTable, noisy_cluster: usize, noisy_class: usize) -> Result<PredictionRates> {
    if t.counts.len() != 2 || t.counts.iter().any(|r| r.len() != 2) {
        return Err(Error::input("prediction rates need a 2x2 table"));
    }
    if noisy_cluster > 1 || noisy_class > 1 {
        return Err(Error::input("row/column index out of range for a 2x2 table"));
    }
    let (clean_cluster, clean_class) = (1 - noisy_cluster, 1 - noisy_class);
    let cols = t.col_totals();
    let noisy_hits = t.counts[noisy_cluster][noisy_class];
    let clean_hits = t.counts[clean_cluster][clean_class];
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(PredictionRates {
        noisy_rate: ratio(noisy_hits, cols[noisy_class]),
        clean_rate: ratio(clean_hits, cols[clean_class]),
        overall: ratio(noisy_hits + clean_hits, t.total()),
    })
}
