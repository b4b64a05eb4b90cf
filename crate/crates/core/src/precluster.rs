//! Pre-clustering of feature space into about `sqrt(n)` small clusters, each
//! with its own average treatment effect on the treated (ATT).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::Effects;
use crate::domain::{Dataset, PreclusterMode};
use crate::error::{PcmError, Result};
use crate::grid::{cell_id_of, GridIndex};
use crate::rng::PcmRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Cell id (box mode) or centre index (k-means mode).
    pub id: usize,
    /// Dataset indices, ascending.
    pub members: Vec<usize>,
    pub att: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreClustering {
    pub mode: PreclusterMode,
    /// Cell side length; box mode only.
    pub epsilon: Option<f64>,
    /// Retained clusters, ordered by id.
    pub clusters: Vec<Cluster>,
    /// Clusters excluded for being empty or lacking a treatment arm.
    pub dropped: usize,
}

impl PreClustering {
    pub fn atts(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.att).collect()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Cluster position (into `clusters`) of every dataset subject.
    pub fn membership(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (j, c) in self.clusters.iter().enumerate() {
            for &i in &c.members {
                out[i] = Some(j);
            }
        }
        out
    }
}

/// Number of grid cells per axis, `floor(n^(1/(2d)))`, computed exactly.
/// Requires `n >= 2^d`.
pub fn cells_per_axis(n: usize, d: usize) -> Result<usize> {
    let enough = 1u128.checked_shl(d as u32).is_some_and(|p| n as u128 >= p);
    if d == 0 || !enough {
        return Err(PcmError::TooFewSubjects { n, d });
    }
    let e = 2 * d as u32;
    let fits = |m: usize| (m as u128).checked_pow(e).is_some_and(|p| p <= n as u128);
    let mut m = (n as f64).powf(1.0 / e as f64).floor() as usize;
    while m > 0 && !fits(m) {
        m -= 1;
    }
    while fits(m + 1) {
        m += 1;
    }
    if m == 0 {
        return Err(PcmError::TooFewSubjects { n, d });
    }
    Ok(m)
}

/// Side length of the ε-net cells: `1 / floor(n^(1/(2d)))`.
pub fn epsilon_of(n: usize, d: usize) -> Result<f64> {
    Ok(1.0 / cells_per_axis(n, d)? as f64)
}

/// Row-major cell id of `x` (first axis outermost) in the grid of side `epsilon`.
pub fn box_index(x: &[f64], epsilon: f64) -> usize {
    let m = (1.0 / epsilon).round().max(1.0) as usize;
    cell_id_of(x, epsilon, m)
}

fn finish(
    mode: PreclusterMode,
    epsilon: Option<f64>,
    groups: impl Iterator<Item = (usize, Vec<usize>)>,
    empty: usize,
    effects: &Effects,
) -> PreClustering {
    let mut dropped = empty;
    let mut clusters = Vec::new();
    for (id, members) in groups {
        match effects.mean_over(&members) {
            Ok(att) => clusters.push(Cluster { id, members, att }),
            Err(_) => dropped += 1,
        }
    }
    PreClustering {
        mode,
        epsilon,
        clusters,
        dropped,
    }
}

/// Box clustering on the ε-net with `ε = epsilon_of(n, d)`, `n` being the
/// number of subjects eligible under `effects`.
pub fn box_partition(dataset: &Dataset, effects: &Effects) -> Result<PreClustering> {
    let eligible = effects.eligible();
    let m = cells_per_axis(eligible.len(), dataset.d)?;
    let grid = GridIndex::build(dataset.d, m, &eligible, |i| &dataset.subjects[i].x);
    let empty = grid.num_cells() - grid.occupied().count();
    let groups = grid.occupied().map(|(id, members)| (id, members.to_vec()));
    Ok(finish(
        PreclusterMode::Box,
        Some(grid.epsilon()),
        groups,
        empty,
        effects,
    ))
}

const LLOYD_MAX_ITERS: usize = 50;
const LLOYD_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    /// Centre index of every input point.
    pub labels: Vec<usize>,
    pub iterations: usize,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, ctr) in centers.iter().enumerate() {
        let dd = sq_dist(ctr, p);
        if dd < best_d {
            best_d = dd;
            best = c;
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations (squared Euclidean distance,
/// ties to the lower centre index, empty clusters keep their centre).
pub fn kmeans(points: &[&[f64]], k: usize, rng: &mut PcmRng) -> KMeans {
    let n = points.len();
    assert!(k >= 1 && k <= n, "k must lie in [1, n]");
    let mut chosen = vec![false; n];
    let first = rng.below(n);
    chosen[first] = true;
    let mut centers = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.par_iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target at the very end of the mass
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.below(free.len())]
        };
        chosen[pick] = true;
        let c = points[pick].to_vec();
        d2.par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(w, p)| *w = w.min(sq_dist(p, &c)));
        centers.push(c);
    }

    let d = points[0].len();
    let mut labels = Vec::new();
    let mut iterations = 0;
    for _ in 0..LLOYD_MAX_ITERS {
        iterations += 1;
        labels = points.par_iter().map(|p| nearest(&centers, p)).collect();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new, &centers[c]).sqrt());
            centers[c] = new;
        }
        if shift <= LLOYD_TOL {
            break;
        }
    }
    KMeans {
        centers,
        labels,
        iterations,
    }
}

/// K-means pre-clustering of the eligible subjects, `k` defaulting to
/// `ceil(sqrt(n))`.
pub fn kmeans_partition(
    dataset: &Dataset,
    effects: &Effects,
    k: Option<usize>,
    seed: u64,
) -> Result<PreClustering> {
    let eligible = effects.eligible();
    let n = eligible.len();
    let k = k.unwrap_or_else(|| (n as f64).sqrt().ceil() as usize);
    if k == 0 || k > n {
        return Err(PcmError::KOutOfRange { k, len: n });
    }
    let points: Vec<&[f64]> = eligible.iter().map(|&i| dataset.subjects[i].x.as_slice()).collect();
    let mut rng = PcmRng::derived(seed, &[0x6b6d_6561_6e73]);
    let km = kmeans(&points, k, &mut rng);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (&i, &l) in eligible.iter().zip(&km.labels) {
        groups[l].push(i);
    }
    let empty = groups.iter().filter(|g| g.is_empty()).count();
    let groups = groups.into_iter().enumerate().filter(|(_, g)| !g.is_empty());
    Ok(finish(PreclusterMode::Kmeans, None, groups, empty, effects))
}

pub fn partition(
    dataset: &Dataset,
    effects: &Effects,
    mode: PreclusterMode,
    seed: u64,
) -> Result<PreClustering> {
    match mode {
        PreclusterMode::Box => box_partition(dataset, effects),
        PreclusterMode::Kmeans => kmeans_partition(dataset, effects, None, seed),
    }
}
