//! Optimal 1-D k-means over cluster ATTs, choice of the number of effect
//! levels, and merging of clusters into subpopulations.

use serde::{Deserialize, Serialize};

use crate::counterfactual::Effects;
use crate::domain::LevelModel;
use crate::error::{PcmError, Result};
use crate::precluster::PreClustering;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneDClustering {
    pub k: usize,
    /// Group means, ascending.
    pub centers: Vec<f64>,
    /// `k - 1` split positions in the sorted order: group `g` covers sorted
    /// positions `boundaries[g-1]..boundaries[g]`.
    pub boundaries: Vec<usize>,
    /// Mean squared deviation of the values from their group centre.
    pub err: f64,
    /// Group of every input value, in input order.
    pub labels: Vec<usize>,
}

/// Sorted values with prefix sums for O(1) segment costs.
struct Segments {
    /// Input positions in ascending value order (ties by position).
    order: Vec<usize>,
    sorted: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Segments {
    fn new(values: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        // Centre before accumulating to limit cancellation.
        let shift = sorted[sorted.len() / 2];
        let mut s1 = vec![0.0; sorted.len() + 1];
        let mut s2 = vec![0.0; sorted.len() + 1];
        for (i, v) in sorted.iter().enumerate() {
            let c = v - shift;
            s1[i + 1] = s1[i] + c;
            s2[i + 1] = s2[i] + c * c;
        }
        Self {
            order,
            sorted,
            s1,
            s2,
        }
    }

    fn len(&self) -> usize {
        self.sorted.len()
    }

    /// Within-segment sum of squared deviations of `sorted[i..j]`.
    fn cost(&self, i: usize, j: usize) -> f64 {
        if self.sorted[i] == self.sorted[j - 1] {
            return 0.0;
        }
        let s = self.s1[j] - self.s1[i];
        ((self.s2[j] - self.s2[i]) - s * s / (j - i) as f64).max(0.0)
    }
}

/// Suffix table: `best[q][i]` is the least cost of splitting `sorted[i..]`
/// into `q` non-empty contiguous groups.
struct SuffixDp {
    best: Vec<Vec<f64>>,
}

impl SuffixDp {
    fn new(seg: &Segments, k_max: usize) -> Self {
        let n = seg.len();
        let mut best = vec![vec![f64::INFINITY; n + 1]; k_max + 1];
        best[0][n] = 0.0;
        for q in 1..=k_max {
            let (done, rest) = best.split_at_mut(q);
            let (prev, cur) = (&done[q - 1], &mut rest[0]);
            // need at least q values left
            for i in (0..=n - q).rev() {
                let mut b = f64::INFINITY;
                for (j, &tail) in prev.iter().enumerate().take(n - q + 2).skip(i + 1) {
                    let c = seg.cost(i, j) + tail;
                    if c < b {
                        b = c;
                    }
                }
                cur[i] = b;
            }
        }
        Self { best }
    }

    /// Lexicographically smallest optimal boundaries for `q` groups.
    fn boundaries(&self, seg: &Segments, q: usize) -> Vec<usize> {
        let n = seg.len();
        let mut out = Vec::with_capacity(q.saturating_sub(1));
        let mut pos = 0;
        for g in 1..q {
            let left = q - g + 1;
            let target = self.best[left][pos];
            let tol = 1e-12 * target.abs().max(1e-300);
            let j = (pos + 1..=n - (left - 1))
                .find(|&j| seg.cost(pos, j) + self.best[left - 1][j] <= target + tol)
                .expect("DP table is consistent");
            out.push(j);
            pos = j;
        }
        out
    }
}

fn assemble(values: &[f64], seg: &Segments, k: usize, boundaries: Vec<usize>) -> OneDClustering {
    let n = seg.len();
    let mut centers = Vec::with_capacity(k);
    let mut labels = vec![0usize; n];
    let mut sq = 0.0;
    let mut start = 0;
    for (g, &end) in boundaries.iter().chain(std::iter::once(&n)).enumerate() {
        let group = &seg.sorted[start..end];
        let center = if group[0] == group[group.len() - 1] {
            group[0]
        } else {
            group.iter().sum::<f64>() / group.len() as f64
        };
        sq += group.iter().map(|v| (v - center) * (v - center)).sum::<f64>();
        for &pos in &seg.order[start..end] {
            labels[pos] = g;
        }
        centers.push(center);
        start = end;
    }
    debug_assert_eq!(values.len(), n);
    OneDClustering {
        k,
        centers,
        boundaries,
        err: sq / n as f64,
        labels,
    }
}

/// Globally optimal partition of `values` into `k` groups under squared error.
///
/// Dynamic programming over the sorted values, O(K^2 k) time. Among several
/// optimal partitions the one with lexicographically smallest boundaries wins.
pub fn optimal_1d_clustering(values: &[f64], k: usize) -> Result<OneDClustering> {
    if k == 0 || k > values.len() {
        return Err(PcmError::KOutOfRange { k, len: values.len() });
    }
    let seg = Segments::new(values);
    let dp = SuffixDp::new(&seg, k);
    let b = dp.boundaries(&seg, k);
    Ok(assemble(values, &seg, k, b))
}

/// Optimal clusterings for every `k` in `1..=k_max`, sharing one DP table.
pub fn optimal_1d_all(values: &[f64], k_max: usize) -> Result<Vec<OneDClustering>> {
    if k_max == 0 || k_max > values.len() {
        return Err(PcmError::KOutOfRange {
            k: k_max,
            len: values.len(),
        });
    }
    let seg = Segments::new(values);
    let dp = SuffixDp::new(&seg, k_max);
    Ok((1..=k_max)
        .map(|k| assemble(values, &seg, k, dp.boundaries(&seg, k)))
        .collect())
}

/// `tau_multiplier * ln(n) / n^(1/(2d))`.
pub fn level_threshold(n: usize, d: usize, tau_multiplier: f64) -> f64 {
    let n = n as f64;
    tau_multiplier * n.ln() / n.powf(1.0 / (2.0 * d as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSelection {
    pub ell_hat: usize,
    pub tau: f64,
    pub err_curve: Vec<(usize, f64)>,
    /// False when no `k <= k_max` reached the threshold.
    pub converged: bool,
    /// The clustering for `ell_hat`.
    pub clustering: OneDClustering,
}

/// Smallest `k` whose optimal error is at most the threshold.
///
/// `n` is the number of subjects in the fit, not the number of clusters. The
/// error curve covers every `k` up to `min(k_max, values.len())`.
pub fn select_num_levels(
    values: &[f64],
    n: usize,
    d: usize,
    tau_multiplier: f64,
    k_max: usize,
) -> Result<LevelSelection> {
    if values.is_empty() {
        return Err(PcmError::KOutOfRange { k: 1, len: 0 });
    }
    let tau = level_threshold(n, d, tau_multiplier);
    let top = k_max.min(values.len()).max(1);
    let all = optimal_1d_all(values, top)?;
    let err_curve: Vec<(usize, f64)> = all.iter().map(|c| (c.k, c.err)).collect();
    let hit = all.iter().position(|c| c.err <= tau);
    let (idx, converged) = match hit {
        Some(i) => (i, true),
        None => (all.len() - 1, false),
    };
    let clustering = all.into_iter().nth(idx).unwrap();
    Ok(LevelSelection {
        ell_hat: clustering.k,
        tau,
        err_curve,
        converged,
        clustering,
    })
}

/// Relabels levels so `mu_hat` ascends and drops levels without members.
/// Returns the number of levels removed.
pub(crate) fn normalise_levels(
    mu: Vec<f64>,
    assignment: &mut [Option<usize>],
) -> (Vec<f64>, usize) {
    let mut sizes = vec![0usize; mu.len()];
    for c in assignment.iter().flatten() {
        sizes[*c] += 1;
    }
    let mut keep: Vec<usize> = (0..mu.len()).filter(|&c| sizes[c] > 0).collect();
    // ties stay in group order
    keep.sort_by(|&a, &b| mu[a].total_cmp(&mu[b]).then(a.cmp(&b)));
    let mut remap = vec![usize::MAX; mu.len()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    for a in assignment.iter_mut().flatten() {
        *a = remap[*a];
    }
    let removed = mu.len() - keep.len();
    (keep.iter().map(|&c| mu[c]).collect(), removed)
}

/// Unions the clusters of each 1-D group into a subpopulation and estimates
/// its effect from all member subjects (point-weighted).
///
/// Returns the model and the number of empty levels that were removed.
pub fn merge_to_subpopulations(
    pre: &PreClustering,
    one_d: &OneDClustering,
    effects: &Effects,
) -> Result<(LevelModel, usize)> {
    if one_d.labels.len() != pre.clusters.len() {
        return Err(PcmError::InvalidConfig(format!(
            "1-D clustering has {} values but there are {} clusters",
            one_d.labels.len(),
            pre.clusters.len()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); one_d.k];
    let mut assignment = vec![None; effects.len()];
    for (cluster, &g) in pre.clusters.iter().zip(&one_d.labels) {
        members[g].extend_from_slice(&cluster.members);
        for &i in &cluster.members {
            assignment[i] = Some(g);
        }
    }
    let mut mu = Vec::with_capacity(one_d.k);
    for (g, m) in members.iter_mut().enumerate() {
        m.sort_unstable();
        mu.push(if m.is_empty() {
            one_d.centers[g]
        } else {
            effects.mean_over(m)?
        });
    }
    let (mu_hat, removed) = normalise_levels(mu, &mut assignment);
    Ok((
        LevelModel {
            mu_hat,
            assignment,
            err_curve: Vec::new(),
            threshold_used: f64::NAN,
        },
        removed,
    ))
}
