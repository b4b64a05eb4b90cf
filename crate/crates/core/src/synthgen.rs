//! Synthetic non-targeted trials.
//!
//! Features are uniform on `[0,1]^d`; the effect level is a piecewise-constant
//! function of the features given by a list of axis-aligned boxes; treatment is
//! a coin flip with probability `p_treat`; both potential outcomes are Gaussian
//! around per-(arm, level) means. Both outcomes are materialised, so every
//! generated subject carries its true counterfactual.
//!
//! JSON schema of [`SynthSpec`]:
//!
//! ```json
//! {
//!   "d": 2,
//!   "regions": [ { "lo": [0.06, 0.08], "hi": [0.44, 0.41], "level": 1 } ],
//!   "default_level": 0,
//!   "mu": { "control": [0, 0, 0], "treated": [0, 1, 2] },
//!   "sigma": 5.0,
//!   "p_treat": 0.5,
//!   "n": 200000,
//!   "seed": 0
//! }
//! ```
//!
//! A box contains `x` when `lo[j] <= x[j] < hi[j]` on every axis, except that an
//! upper bound of exactly 1 is inclusive. Later boxes override earlier ones.

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Subject};
use crate::error::{PcmError, Result};
use crate::rng::PcmRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub level: usize,
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| v >= lo && (v < hi || (hi == 1.0 && v <= 1.0)))
    }

    fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(lo, hi)| hi - lo).product()
    }
}

/// Expected potential outcome per level, for each arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMeans {
    pub control: Vec<f64>,
    pub treated: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub d: usize,
    pub regions: Vec<Region>,
    pub default_level: usize,
    pub mu: OutcomeMeans,
    pub sigma: f64,
    pub p_treat: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Two dimensions, three levels with effects 0, 1, 2. Level 0 is the
    /// background; levels 1 and 2 each occupy two disjoint boxes, so every
    /// non-zero level is split across separate parts of feature space.
    fn default() -> Self {
        let r = |lo: [f64; 2], hi: [f64; 2], level| Region {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            level,
        };
        Self {
            d: 2,
            regions: vec![
                r([0.06, 0.08], [0.44, 0.41], 1),
                r([0.57, 0.59], [0.94, 0.93], 1),
                r([0.56, 0.07], [0.93, 0.41], 2),
                r([0.07, 0.58], [0.45, 0.91], 2),
            ],
            default_level: 0,
            mu: OutcomeMeans {
                control: vec![0.0, 0.0, 0.0],
                treated: vec![0.0, 1.0, 2.0],
            },
            sigma: 5.0,
            p_treat: 0.5,
            n: 200_000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn num_levels(&self) -> usize {
        self.mu.treated.len()
    }

    /// `mu(1, c) - mu(0, c)` for every level.
    pub fn true_effects(&self) -> Vec<f64> {
        self.mu
            .treated
            .iter()
            .zip(&self.mu.control)
            .map(|(t, c)| t - c)
            .collect()
    }

    /// Smallest gap between two distinct levels' effects.
    pub fn effect_separation(&self) -> f64 {
        let eff = self.true_effects();
        let mut kappa = f64::INFINITY;
        for (a, ea) in eff.iter().enumerate() {
            for eb in &eff[a + 1..] {
                kappa = kappa.min((ea - eb).abs());
            }
        }
        kappa
    }

    pub fn level_of(&self, x: &[f64]) -> usize {
        level_of(x, self)
    }

    /// Exact measure of each level under the uniform feature distribution.
    ///
    /// Splits the cube along every box face; inside each elementary cell the
    /// level is constant, so its midpoint decides.
    pub fn level_measures(&self) -> Result<Vec<f64>> {
        const MAX_CELLS: usize = 10_000_000;
        let mut cuts: Vec<Vec<f64>> = Vec::with_capacity(self.d);
        for axis in 0..self.d {
            let mut c = vec![0.0, 1.0];
            for r in &self.regions {
                c.push(r.lo[axis]);
                c.push(r.hi[axis]);
            }
            c.sort_by(f64::total_cmp);
            c.dedup();
            cuts.push(c);
        }
        let total: usize = cuts
            .iter()
            .try_fold(1usize, |acc, c| acc.checked_mul(c.len() - 1))
            .filter(|&t| t <= MAX_CELLS)
            .ok_or_else(|| PcmError::InvalidSpec("too many regions to measure".into()))?;

        let mut measures = vec![0.0; self.num_levels()];
        let mut idx = vec![0usize; self.d];
        let mut mid = vec![0.0; self.d];
        for _ in 0..total {
            let mut vol = 1.0;
            for axis in 0..self.d {
                let (a, b) = (cuts[axis][idx[axis]], cuts[axis][idx[axis] + 1]);
                mid[axis] = 0.5 * (a + b);
                vol *= b - a;
            }
            measures[self.level_of(&mid)] += vol;
            // odometer increment
            for axis in (0..self.d).rev() {
                idx[axis] += 1;
                if idx[axis] + 1 < cuts[axis].len() {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(measures)
    }

    /// True when the level is constant on the closed cube of half-width `half`
    /// around `x` (clipped to the unit cube): for every box, the cube lies
    /// either entirely inside it or entirely outside it.
    pub fn is_interior(&self, x: &[f64], half: f64) -> bool {
        self.regions.iter().all(|r| {
            let mut inside = true;
            let mut disjoint = false;
            for (axis, &v) in x.iter().enumerate() {
                let a = (v - half).max(0.0);
                let b = (v + half).min(1.0);
                let (lo, hi) = (r.lo[axis], r.hi[axis]);
                let upper_ok = b < hi || (hi == 1.0 && b <= 1.0);
                if !(lo <= a && upper_ok) {
                    inside = false;
                }
                if b < lo || a >= hi {
                    disjoint = true;
                }
            }
            inside || disjoint
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PcmError::InvalidSpec(msg));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        let ell = self.num_levels();
        if ell == 0 || self.mu.control.len() != ell {
            return bad(format!(
                "mu.control and mu.treated must have the same non-zero length ({} vs {})",
                self.mu.control.len(),
                ell
            ));
        }
        if self.mu.control.iter().chain(&self.mu.treated).any(|m| !m.is_finite()) {
            return bad("outcome means must be finite".into());
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.p_treat > 0.0 && self.p_treat < 1.0) {
            return bad(format!("p_treat must lie in (0, 1), got {}", self.p_treat));
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.default_level >= ell {
            return bad(format!("default_level {} >= {ell} levels", self.default_level));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if r.lo.len() != self.d || r.hi.len() != self.d {
                return bad(format!("region {i} does not have dimension {}", self.d));
            }
            if r.level >= ell {
                return bad(format!("region {i} has level {} >= {ell}", r.level));
            }
            let ok = r
                .lo
                .iter()
                .zip(&r.hi)
                .all(|(&lo, &hi)| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo < hi);
            if !ok {
                return bad(format!("region {i} must satisfy 0 <= lo < hi <= 1 on every axis"));
            }
        }
        // also rejects a NaN separation
        if ell > 1 && self.effect_separation().partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("level effects must be pairwise distinct".into());
        }
        let measures = self.level_measures()?;
        if let Some(c) = measures.iter().position(|&m| m <= 0.0) {
            return bad(format!("level {c} has zero measure"));
        }
        Ok(())
    }

    /// Analytic measure of a region list entry, ignoring overlaps.
    pub fn region_volume(&self, i: usize) -> f64 {
        self.regions[i].volume()
    }
}

/// Level of the last region containing `x`, or the default level.
pub fn level_of(x: &[f64], spec: &SynthSpec) -> usize {
    spec.regions
        .iter()
        .rev()
        .find(|r| r.contains(x))
        .map_or(spec.default_level, |r| r.level)
}

/// Draw a dataset. Per subject the stream is consumed in a fixed order:
/// `d` uniforms for `x`, one for `t`, then the treated and control outcomes.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = PcmRng::new(spec.seed);
    let mut subjects = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x: Vec<f64> = (0..spec.d).map(|_| rng.uniform()).collect();
        let t = rng.bernoulli(spec.p_treat);
        let c = level_of(&x, spec);
        let v = rng.normal(spec.mu.treated[c], spec.sigma);
        let vbar = rng.normal(spec.mu.control[c], spec.sigma);
        let (y, ybar) = if t { (v, vbar) } else { (vbar, v) };
        subjects.push(Subject {
            x,
            t,
            y,
            ybar: Some(ybar),
            c_true: Some(c),
        });
    }
    Ok(Dataset::new(spec.d, subjects))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level_overlap() -> SynthSpec {
        SynthSpec {
            d: 2,
            regions: vec![
                Region {
                    lo: vec![0.0, 0.0],
                    hi: vec![0.6, 0.6],
                    level: 1,
                },
                Region {
                    lo: vec![0.4, 0.4],
                    hi: vec![1.0, 1.0],
                    level: 2,
                },
            ],
            n: 10,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn level_of_examples() {
        let spec = SynthSpec::default();
        assert_eq!(spec.level_of(&[0.75, 0.25]), 2);
        assert_eq!(spec.level_of(&[0.5, 0.5]), 0);
        let overlap = two_level_overlap();
        assert_eq!(overlap.level_of(&[0.5, 0.5]), 2);
        assert_eq!(overlap.level_of(&[0.1, 0.1]), 1);
        // hi = 1.0 is inclusive
        assert_eq!(overlap.level_of(&[1.0, 1.0]), 2);
        // hi < 1 is exclusive
        assert_eq!(overlap.level_of(&[0.6, 0.2]), 0);
    }

    #[test]
    fn default_spec_measures() {
        let spec = SynthSpec::default();
        spec.validate().unwrap();
        let m = spec.level_measures().unwrap();
        let boxes: Vec<f64> = (0..4).map(|i| spec.region_volume(i)).collect();
        assert!((m[1] - (boxes[0] + boxes[1])).abs() < 1e-12);
        assert!((m[2] - (boxes[2] + boxes[3])).abs() < 1e-12);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_measures_use_last_wins() {
        let m = two_level_overlap().level_measures().unwrap();
        assert!((m[2] - 0.36).abs() < 1e-12);
        assert!((m[1] - (0.36 - 0.04)).abs() < 1e-12);
        assert!((m[0] - (1.0 - 0.36 - 0.32)).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        let base = SynthSpec::default();
        let cases: Vec<SynthSpec> = vec![
            SynthSpec { n: 0, ..base.clone() },
            SynthSpec { p_treat: 1.0, ..base.clone() },
            SynthSpec { sigma: -1.0, ..base.clone() },
            SynthSpec { default_level: 3, ..base.clone() },
            SynthSpec {
                mu: OutcomeMeans {
                    control: vec![0.0, 0.0, 0.0],
                    treated: vec![0.0, 1.0, 1.0],
                },
                ..base.clone()
            },
            // level 2 unreachable
            SynthSpec {
                regions: base.regions[..2].to_vec(),
                ..base.clone()
            },
            SynthSpec {
                regions: vec![Region {
                    lo: vec![0.5, 0.5],
                    hi: vec![0.4, 0.9],
                    level: 1,
                }],
                ..base.clone()
            },
        ];
        for spec in cases {
            assert!(matches!(generate(&spec), Err(PcmError::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn zero_noise_outcomes_are_means() {
        let spec = SynthSpec {
            sigma: 0.0,
            n: 2000,
            ..SynthSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let eff = spec.true_effects();
        let mut saw_treated_level2 = false;
        for (i, s) in ds.subjects.iter().enumerate() {
            let c = s.c_true.unwrap();
            assert_eq!(c, spec.level_of(&s.x));
            assert_eq!(ds.ite(i).unwrap(), eff[c]);
            if s.t && c == 2 {
                saw_treated_level2 = true;
                assert_eq!(s.y, spec.mu.treated[2]);
                assert_eq!(s.ybar, Some(spec.mu.control[2]));
            }
        }
        assert!(saw_treated_level2);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            n: 500,
            seed: 42,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        let bits = |d: &Dataset| -> Vec<u64> {
            d.subjects
                .iter()
                .flat_map(|s| s.x.iter().copied().chain([s.y, s.ybar.unwrap()]))
                .map(f64::to_bits)
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn interior_test_matches_level_constancy() {
        let spec = SynthSpec::default();
        assert!(spec.is_interior(&[0.25, 0.25], 0.05));
        assert!(!spec.is_interior(&[0.44, 0.25], 0.05));
        assert!(spec.is_interior(&[0.5, 0.5], 0.02));
        assert!(!spec.is_interior(&[0.5, 0.5], 0.1));
    }
}
