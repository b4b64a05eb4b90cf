//! Counterfactual outcomes: read from the data, estimated by k-NN regression
//! on the controls, or bypassed with per-cluster arm differences.

use rayon::prelude::*;

use crate::domain::{ite_from_parts, CfMode, Dataset, KnnK, Subject};
use crate::error::{PcmError, Result};
use crate::grid::GridIndex;

/// Per-subject effect information, index-aligned with a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Effects {
    /// ITE of each subject; `None` where no counterfactual is available.
    Ite(Vec<Option<f64>>),
    /// Raw outcomes; a set's effect is its treated mean minus its control mean.
    ArmDifference { treated: Vec<bool>, y: Vec<f64> },
}

impl Effects {
    /// ITEs for every subject carrying a counterfactual.
    pub fn from_counterfactuals(dataset: &Dataset) -> Self {
        Effects::Ite(
            dataset
                .subjects
                .iter()
                .map(|s| ite_from_parts(s.y, s.ybar, s.t))
                .collect(),
        )
    }

    pub fn arm_difference(dataset: &Dataset) -> Self {
        Effects::ArmDifference {
            treated: dataset.subjects.iter().map(|s| s.t).collect(),
            y: dataset.subjects.iter().map(|s| s.y).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Effects::Ite(v) => v.len(),
            Effects::ArmDifference { y, .. } => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_eligible(&self, i: usize) -> bool {
        match self {
            Effects::Ite(v) => v[i].is_some(),
            Effects::ArmDifference { .. } => true,
        }
    }

    /// Indices of subjects that take part in the fit, ascending.
    pub fn eligible(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_eligible(i)).collect()
    }

    pub fn ite(&self, i: usize) -> Option<f64> {
        match self {
            Effects::Ite(v) => v[i],
            Effects::ArmDifference { .. } => None,
        }
    }

    /// Average effect over `members`, summed in the order given.
    ///
    /// With ITEs this is the mean ITE of the eligible members; with arm
    /// outcomes it is the control-difference ATT, which fails on a one-sided set.
    pub fn mean_over(&self, members: &[usize]) -> Result<f64> {
        match self {
            Effects::Ite(v) => {
                let (sum, n) = members
                    .iter()
                    .filter_map(|&i| v[i])
                    .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
                if n == 0 {
                    Err(PcmError::OneSidedCluster {
                        missing: "eligible",
                    })
                } else {
                    Ok(sum / n as f64)
                }
            }
            Effects::ArmDifference { treated, y } => {
                arm_difference(members.iter().map(|&i| (treated[i], y[i])))
            }
        }
    }
}

pub(crate) fn arm_difference(arms: impl Iterator<Item = (bool, f64)>) -> Result<f64> {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (t, y) in arms {
        if t {
            s1 += y;
            n1 += 1;
        } else {
            s0 += y;
            n0 += 1;
        }
    }
    match (n1, n0) {
        (0, _) => Err(PcmError::OneSidedCluster { missing: "treated" }),
        (_, 0) => Err(PcmError::OneSidedCluster { missing: "control" }),
        _ => Ok(s1 / n1 as f64 - s0 / n0 as f64),
    }
}

/// Mean treated outcome minus mean control outcome within one cluster.
pub fn control_diff_att(members: &[&Subject]) -> Result<f64> {
    arm_difference(members.iter().map(|s| (s.t, s.y)))
}

/// Exact k-nearest-neighbour regressor over control outcomes.
///
/// Neighbours are ranked by squared Euclidean distance, ties broken by the
/// lower control index. Dimensions up to 4 use a grid with roughly `k`
/// controls per cell and expand rings of cells until the k-th distance is
/// certified; higher dimensions scan every control.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    d: usize,
    k: usize,
    points: Vec<Vec<f64>>,
    y: Vec<f64>,
    grid: Option<GridIndex>,
}

const GRID_MAX_DIM: usize = 4;

/// Fits on the controls (`t = 0`) of `dataset`, in dataset order.
pub fn fit_knn(dataset: &Dataset, k: KnnK) -> Result<KnnRegressor> {
    let (points, y): (Vec<Vec<f64>>, Vec<f64>) = dataset
        .subjects
        .iter()
        .filter(|s| !s.t)
        .map(|s| (s.x.clone(), s.y))
        .unzip();
    let available = y.len();
    let k = match k {
        KnnK::Auto => (available as f64).sqrt().ceil() as usize,
        KnnK::Fixed(k) => k,
    };
    if k == 0 || available < k {
        return Err(PcmError::InsufficientControls {
            needed: k.max(1),
            available,
        });
    }
    let d = dataset.d;
    let grid = (d <= GRID_MAX_DIM).then(|| {
        let per_axis = ((available as f64 / k as f64).powf(1.0 / d as f64)).floor() as usize;
        let idx: Vec<usize> = (0..available).collect();
        GridIndex::build(d, per_axis.max(1), &idx, |i| &points[i])
    });
    Ok(KnnRegressor {
        d,
        k,
        points,
        y,
        grid,
    })
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl KnnRegressor {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_controls(&self) -> usize {
        self.y.len()
    }

    /// Indices of the k nearest controls, nearest first.
    pub fn neighbours(&self, x: &[f64]) -> Vec<usize> {
        let mut cand = match &self.grid {
            Some(g) => self.grid_candidates(g, x),
            None => self
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| (dist2(p, x), i))
                .collect(),
        };
        let k = self.k;
        if cand.len() > k {
            cand.select_nth_unstable_by(k - 1, by_dist_then_index);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_dist_then_index);
        cand.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let nb = self.neighbours(x);
        nb.iter().map(|&i| self.y[i]).sum::<f64>() / nb.len() as f64
    }

    fn grid_candidates(&self, g: &GridIndex, x: &[f64]) -> Vec<(f64, usize)> {
        let m = g.cells_per_axis();
        let eps = g.epsilon();
        let centre: Vec<usize> = x.iter().map(|&v| g.axis_cell(v)).collect();
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(4 * self.k);
        let mut scratch: Vec<f64> = Vec::new();
        let mut r = 0usize;
        loop {
            let ranges: Vec<(usize, usize)> = centre
                .iter()
                .map(|&c| (c.saturating_sub(r), (c + r).min(m - 1)))
                .collect();
            g.for_each_cell_in(&ranges, |cell| {
                // only the shell at Chebyshev distance r is new
                let mut rem = cell;
                let mut on_shell = r == 0;
                for axis in (0..self.d).rev() {
                    let c = rem % m;
                    rem /= m;
                    if c.abs_diff(centre[axis]) == r {
                        on_shell = true;
                    }
                }
                if on_shell {
                    for &i in g.cell_members(cell) {
                        cand.push((dist2(&self.points[i], x), i));
                    }
                }
            });

            // Distance from x to the nearest face of the searched block that
            // still has unsearched cells behind it.
            let mut bound = f64::INFINITY;
            for (axis, &(lo, hi)) in ranges.iter().enumerate() {
                if lo > 0 {
                    bound = bound.min(x[axis] - lo as f64 * eps);
                }
                if hi + 1 < m {
                    bound = bound.min((hi + 1) as f64 * eps - x[axis]);
                }
            }
            if bound == f64::INFINITY {
                return cand;
            }
            if cand.len() >= self.k {
                scratch.clear();
                scratch.extend(cand.iter().map(|c| c.0));
                let (_, kth, _) = scratch.select_nth_unstable_by(self.k - 1, f64::total_cmp);
                let safe = (bound * (1.0 - 1e-9)).max(0.0);
                // Strict: an equally distant point outside could win the index tie.
                if *kth < safe * safe {
                    return cand;
                }
            }
            r += 1;
        }
    }
}

/// Fills in counterfactuals according to `mode`.
///
/// * `Given` checks that every treated subject has one and returns the data unchanged.
/// * `Knn` predicts the untreated outcome of each treated subject from the
///   controls and clears the controls' counterfactuals, so only the treated
///   population enters the fit.
/// * `ControlDiff` returns the data unchanged; effects come from arm differences.
pub fn attach_counterfactuals(dataset: &Dataset, mode: CfMode) -> Result<Dataset> {
    match mode {
        CfMode::Given => {
            if let Some(index) = dataset.subjects.iter().position(|s| s.t && s.ybar.is_none()) {
                return Err(PcmError::MissingCounterfactual { index });
            }
            Ok(dataset.clone())
        }
        CfMode::ControlDiff => Ok(dataset.clone()),
        CfMode::Knn(k) => {
            let reg = fit_knn(dataset, k)?;
            let estimates: Vec<Option<f64>> = dataset
                .subjects
                .par_iter()
                .map(|s| s.t.then(|| reg.predict(&s.x)))
                .collect();
            let subjects = dataset
                .subjects
                .iter()
                .zip(estimates)
                .map(|(s, ybar)| Subject { ybar, ..s.clone() })
                .collect();
            Ok(Dataset::new(dataset.d, subjects))
        }
    }
}

/// Effects to fit on for a dataset that already went through
/// [`attach_counterfactuals`] with the same mode.
pub fn effects_for(dataset: &Dataset, mode: CfMode) -> Effects {
    match mode {
        CfMode::Given | CfMode::Knn(_) => Effects::from_counterfactuals(dataset),
        CfMode::ControlDiff => Effects::arm_difference(dataset),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn controls_1d(pts: &[(f64, f64)]) -> Dataset {
        Dataset::new(
            1,
            pts.iter().map(|&(x, y)| Subject::new(vec![x], false, y)).collect(),
        )
    }

    /// Sort-everything reference.
    fn brute_neighbours(points: &[Vec<f64>], x: &[f64], k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|p| p.1).collect()
    }

    #[test]
    fn knn_examples() {
        let ds = controls_1d(&[(0.0, 1.0), (0.5, 3.0)]);
        let k1 = fit_knn(&ds, KnnK::Fixed(1)).unwrap();
        assert_eq!(k1.predict(&[0.1]), 1.0);
        // equidistant: lower index wins
        assert_eq!(k1.predict(&[0.25]), 1.0);
        let k2 = fit_knn(&ds, KnnK::Fixed(2)).unwrap();
        assert_eq!(k2.predict(&[0.9]), 2.0);
        assert_eq!(k2.predict(&[0.0]), 2.0);
    }

    #[test]
    fn knn_ignores_treated_and_checks_count() {
        let mut ds = controls_1d(&[(0.0, 1.0), (0.5, 3.0)]);
        ds.subjects.push(Subject::new(vec![0.1], true, 100.0));
        let reg = fit_knn(&ds, KnnK::Fixed(1)).unwrap();
        assert_eq!(reg.num_controls(), 2);
        assert_eq!(reg.predict(&[0.1]), 1.0);
        assert!(matches!(
            fit_knn(&ds, KnnK::Fixed(3)),
            Err(PcmError::InsufficientControls {
                needed: 3,
                available: 2
            })
        ));
        assert_eq!(fit_knn(&ds, KnnK::Auto).unwrap().k(), 2);
    }

    #[test]
    fn control_diff_examples() {
        let t = |y| Subject::new(vec![0.5], true, y);
        let c = |y| Subject::new(vec![0.5], false, y);
        let (a, b, e) = (t(2.0), t(4.0), c(1.0));
        assert_eq!(control_diff_att(&[&a, &b, &e]).unwrap(), 2.0);
        let (f, g) = (t(5.0), c(5.0));
        assert_eq!(control_diff_att(&[&f, &g]).unwrap(), 0.0);
        assert!(matches!(
            control_diff_att(&[&a, &b]),
            Err(PcmError::OneSidedCluster { missing: "control" })
        ));
    }

    #[test]
    fn given_mode_requires_treated_counterfactuals() {
        let ds = Dataset::new(
            1,
            vec![
                Subject::new(vec![0.1], false, 0.0),
                Subject::new(vec![0.2], true, 1.0),
            ],
        );
        assert!(matches!(
            attach_counterfactuals(&ds, CfMode::Given),
            Err(PcmError::MissingCounterfactual { index: 1 })
        ));
        let out = attach_counterfactuals(&ds, CfMode::ControlDiff).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn knn_mode_keeps_only_treated_counterfactuals() {
        let ds = Dataset::new(
            1,
            vec![
                Subject::new(vec![0.1], false, 2.0).with_counterfactual(9.0),
                Subject::new(vec![0.2], true, 5.0).with_counterfactual(9.0),
                Subject::new(vec![0.9], false, 4.0),
            ],
        );
        let out = attach_counterfactuals(&ds, CfMode::Knn(KnnK::Fixed(1))).unwrap();
        assert_eq!(out.subjects[0].ybar, None);
        assert_eq!(out.subjects[1].ybar, Some(2.0));
        assert_eq!(out.subjects[2].ybar, None);
        let eff = effects_for(&out, CfMode::Knn(KnnK::Auto));
        assert_eq!(eff.eligible(), vec![1]);
        assert_eq!(eff.ite(1), Some(3.0));
    }

    #[test]
    fn arm_difference_effects() {
        let ds = Dataset::new(
            1,
            vec![
                Subject::new(vec![0.1], true, 2.0),
                Subject::new(vec![0.2], false, 1.0),
                Subject::new(vec![0.3], true, 4.0),
            ],
        );
        let eff = Effects::arm_difference(&ds);
        assert_eq!(eff.eligible(), vec![0, 1, 2]);
        assert_eq!(eff.mean_over(&[0, 1, 2]).unwrap(), 2.0);
        assert!(eff.mean_over(&[0, 2]).is_err());
    }

    fn points_strategy(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        // Coarse lattice values force plenty of exact distance ties.
        let coord = prop_oneof![(0u32..=8).prop_map(|v| v as f64 / 8.0), 0.0f64..=1.0];
        prop::collection::vec(prop::collection::vec(coord, d), 1..120)
    }

    proptest! {
        #[test]
        fn grid_search_matches_brute_force(
            d in 1usize..=3,
            seed_pts in points_strategy(3),
            queries in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 1..10),
            k in 1usize..12,
        ) {
            let pts: Vec<Vec<f64>> = seed_pts.iter().map(|p| p[..d].to_vec()).collect();
            prop_assume!(pts.len() >= k);
            let ds = Dataset::new(d, pts.iter().enumerate().map(|(i, p)| Subject::new(p.clone(), false, i as f64)).collect());
            let reg = fit_knn(&ds, KnnK::Fixed(k)).unwrap();
            for q in &queries {
                let q = &q[..d];
                prop_assert_eq!(reg.neighbours(q), brute_neighbours(&pts, q, k));
            }
        }

        #[test]
        fn prediction_invariant_to_permutation_without_ties(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -5.0f64..5.0), 3..60),
            q in (0.0f64..1.0, 0.0f64..1.0),
            k in 1usize..3,
            rot in 0usize..60,
        ) {
            let make = |v: &[(f64, f64, f64)]| Dataset::new(2, v.iter().map(|&(a, b, y)| Subject::new(vec![a, b], false, y)).collect());
            let mut perm = pts.clone();
            perm.rotate_left(rot % pts.len());
            let q = [q.0, q.1];
            let a = fit_knn(&make(&pts), KnnK::Fixed(k)).unwrap();
            let b = fit_knn(&make(&perm), KnnK::Fixed(k)).unwrap();
            let mut dists: Vec<f64> = pts.iter().map(|&(x0, x1, _)| (x0 - q[0]).powi(2) + (x1 - q[1]).powi(2)).collect();
            dists.sort_by(f64::total_cmp);
            prop_assume!(dists.windows(2).all(|w| w[0] != w[1]));
            prop_assert_eq!(a.predict(&q).to_bits(), b.predict(&q).to_bits());
        }
    }
}
