//! Per-subject refinement: smooth each subject's effect over the ε-cube
//! centred on it, then move it to the level whose effect is closest.

use rayon::prelude::*;

use crate::counterfactual::{arm_difference, Effects};
use crate::domain::{Dataset, LevelModel};
use crate::grid::GridIndex;
use crate::merge1d::normalise_levels;

/// Cells at least this far inside the cube on every axis are taken whole.
const INTERIOR_MARGIN: f64 = 1e-12;

/// Bucket index for cube queries of side ε over the eligible subjects.
///
/// Buckets are `1/s` of ε wide, so most of a cube is covered by buckets that
/// lie entirely inside it and need no per-subject test. Coordinates and
/// effect inputs are copied into flat arrays in bucket order.
pub struct SmoothingIndex<'a> {
    dataset: &'a Dataset,
    effects: &'a Effects,
    epsilon: f64,
    half: f64,
    grid: GridIndex,
    /// `d` coordinates per slot, slots in the grid's member order.
    coords: Vec<f64>,
    /// ITE, or raw outcome under arm differences.
    values: Vec<f64>,
    treated: Vec<bool>,
}

/// Buckets per ε along an axis, keeping the bucket count near the subject count.
fn subdivision(m: usize, d: usize, n: usize) -> usize {
    let budget = (8 * n).max(1024) as f64;
    (1..=4)
        .rev()
        .find(|&s| ((m * s) as f64).powi(d as i32) <= budget)
        .unwrap_or(1)
}

impl<'a> SmoothingIndex<'a> {
    pub fn build(dataset: &'a Dataset, effects: &'a Effects, epsilon: f64) -> Self {
        let eligible = effects.eligible();
        assert!(dataset.n() < 1 << 32, "smoothing supports fewer than 2^32 subjects");
        let m = (1.0 / epsilon).round().max(1.0) as usize;
        let s = subdivision(m, dataset.d, eligible.len());
        let grid = GridIndex::build(dataset.d, m * s, &eligible, |i| &dataset.subjects[i].x);
        let mut coords = Vec::with_capacity(eligible.len() * dataset.d);
        let mut values = Vec::with_capacity(eligible.len());
        let mut treated = Vec::with_capacity(eligible.len());
        for c in 0..grid.num_cells() {
            for &i in grid.cell_members(c) {
                let s = &dataset.subjects[i];
                coords.extend_from_slice(&s.x);
                treated.push(s.t);
                values.push(match effects {
                    Effects::Ite(v) => v[i].expect("indexed subjects are eligible"),
                    Effects::ArmDifference { y, .. } => y[i],
                });
            }
        }
        let epsilon = 1.0 / m as f64;
        Self {
            dataset,
            effects,
            epsilon,
            half: 0.5 * epsilon,
            grid,
            coords,
            values,
            treated,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Appends `index << 32 | slot` for every indexed subject inside the
    /// cube centred on `x`, so sorting the keys orders hits by subject.
    fn scan(&self, x: &[f64], out: &mut Vec<u64>) {
        let d = self.dataset.d;
        let half = self.half;
        let ranges = self.grid.cover(x, half);
        let w = self.grid.epsilon();
        // inside[j][c - lo_j]: bucket c lies within the cube along axis j
        let inside: Vec<Vec<bool>> = ranges
            .iter()
            .zip(x)
            .map(|(&(lo, hi), &v)| {
                (lo..=hi)
                    .map(|c| {
                        c as f64 * w >= v - half + INTERIOR_MARGIN
                            && (c + 1) as f64 * w <= v + half - INTERIOR_MARGIN
                    })
                    .collect()
            })
            .collect();
        self.grid.for_each_cell_coords_in(&ranges, |cell, at| {
            let slots = self.grid.cell_range(cell);
            let members = self.grid.cell_members(cell);
            let interior = at
                .iter()
                .zip(&ranges)
                .zip(&inside)
                .all(|((&c, &(lo, _)), flags)| flags[c - lo]);
            if interior {
                out.extend(members.iter().zip(slots).map(|(&j, slot)| key(j, slot)));
                return;
            }
            // branch-free filter: write every candidate, advance on a hit
            let mut k = out.len();
            out.resize(k + members.len(), 0);
            for (&j, slot) in members.iter().zip(slots) {
                let p = &self.coords[slot * d..(slot + 1) * d];
                let mut hit = true;
                for (a, b) in p.iter().zip(x) {
                    hit &= (a - b).abs() <= half;
                }
                out[k] = key(j, slot);
                k += hit as usize;
            }
            out.truncate(k);
        });
    }

    /// Eligible subjects within `half` of `x` on every axis, ascending.
    pub fn neighbourhood(&self, x: &[f64]) -> Vec<usize> {
        let mut hits = Vec::new();
        self.scan(x, &mut hits);
        hits.sort_unstable();
        hits.into_iter().map(|h| (h >> 32) as usize).collect()
    }

    /// Mean effect over the closed ε-cube centred on subject `i`, the subject
    /// included. `None` if `i` is not eligible or, with arm differences,
    /// the cube lacks one arm. Sums run in ascending subject order.
    pub fn smoothed_ite(&self, i: usize) -> Option<f64> {
        if !self.effects.is_eligible(i) {
            return None;
        }
        let mut hits = Vec::new();
        self.scan(&self.dataset.subjects[i].x, &mut hits);
        hits.sort_unstable();
        let slots = hits.iter().map(|&h| (h & SLOT_MASK) as usize);
        match self.effects {
            Effects::Ite(_) => {
                let sum = slots.fold(0.0, |s, slot| s + self.values[slot]);
                Some(sum / hits.len() as f64)
            }
            Effects::ArmDifference { .. } => {
                arm_difference(slots.map(|slot| (self.treated[slot], self.values[slot]))).ok()
            }
        }
    }

    /// Smoothed effect of every subject, index-aligned with the dataset.
    pub fn smooth_all(&self) -> Vec<Option<f64>> {
        (0..self.dataset.n())
            .into_par_iter()
            .map(|i| self.smoothed_ite(i))
            .collect()
    }
}

const SLOT_MASK: u64 = (1 << 32) - 1;

#[inline]
fn key(index: usize, slot: usize) -> u64 {
    ((index as u64) << 32) | slot as u64
}

/// Index of the closest level effect; ties go to the lower level.
pub fn nearest_level(value: f64, mu_hat: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, mu) in mu_hat.iter().enumerate() {
        let d = (value - mu).abs();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// One E-M style update: reassign by smoothed effect, then re-estimate each
/// level from the raw effects of its new members.
///
/// Subjects without a smoothed value keep their level. Returns the new model
/// and the number of levels that ended up empty and were removed.
pub fn reassign_levels(
    model: &LevelModel,
    smoothed: &[Option<f64>],
    effects: &Effects,
) -> (LevelModel, usize) {
    let mut assignment: Vec<Option<usize>> = model
        .assignment
        .iter()
        .zip(smoothed)
        .map(|(&a, s)| match (a, s) {
            (Some(_), Some(v)) => Some(nearest_level(*v, &model.mu_hat)),
            (a, _) => a,
        })
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); model.ell_hat()];
    for (i, a) in assignment.iter().enumerate() {
        if let Some(c) = a {
            members[*c].push(i);
        }
    }
    let mu: Vec<f64> = members
        .iter()
        .zip(&model.mu_hat)
        .map(|(m, &old)| {
            if m.is_empty() {
                old
            } else {
                // a one-sided level under arm differences keeps its estimate
                effects.mean_over(m).unwrap_or(old)
            }
        })
        .collect();
    let (mu_hat, removed) = normalise_levels(mu, &mut assignment);
    (
        LevelModel {
            mu_hat,
            assignment,
            err_curve: model.err_curve.clone(),
            threshold_used: model.threshold_used,
        },
        removed,
    )
}

/// `iters` rounds of [`reassign_levels`]; smoothed effects do not depend on
/// the model, so they are computed once by the caller.
pub fn run_em(
    model: LevelModel,
    smoothed: &[Option<f64>],
    effects: &Effects,
    iters: usize,
) -> (LevelModel, usize) {
    let mut model = model;
    let mut removed = 0;
    for _ in 0..iters {
        let (next, r) = reassign_levels(&model, smoothed, effects);
        model = next;
        removed += r;
    }
    (model, removed)
}
