//! Core data types shared by every stage of the fit.

use serde::{Deserialize, Serialize};

use crate::error::{PcmError, Result};

/// One trial participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    /// Features, each in `[0, 1]`.
    pub x: Vec<f64>,
    /// Treatment indicator.
    pub t: bool,
    /// Observed (factual) outcome.
    pub y: f64,
    /// Counterfactual outcome, when known or estimated.
    pub ybar: Option<f64>,
    /// True effect level; only used for evaluation.
    pub c_true: Option<usize>,
}

impl Subject {
    pub fn new(x: Vec<f64>, t: bool, y: f64) -> Self {
        Self {
            x,
            t,
            y,
            ybar: None,
            c_true: None,
        }
    }

    pub fn with_counterfactual(mut self, ybar: f64) -> Self {
        self.ybar = Some(ybar);
        self
    }

    pub fn with_level(mut self, c: usize) -> Self {
        self.c_true = Some(c);
        self
    }
}

/// Individual treatment effect `(y - ybar) * (2t - 1)`: always treated minus untreated.
pub fn compute_ite(subject: &Subject) -> Result<f64> {
    ite_from_parts(subject.y, subject.ybar, subject.t).ok_or(PcmError::NoCounterfactual)
}

pub(crate) fn ite_from_parts(y: f64, ybar: Option<f64>, t: bool) -> Option<f64> {
    let ybar = ybar?;
    Some(if t { y - ybar } else { ybar - y })
}

/// An ordered collection of subjects sharing one feature dimension.
///
/// Subject order is significant: every per-subject output of the fit is
/// index-aligned with `subjects`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub d: usize,
    pub subjects: Vec<Subject>,
}

impl Dataset {
    pub fn new(d: usize, subjects: Vec<Subject>) -> Self {
        Self { d, subjects }
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// ITE of subject `i`, if it has a counterfactual.
    pub fn ite(&self, i: usize) -> Result<f64> {
        let s = &self.subjects[i];
        ite_from_parts(s.y, s.ybar, s.t).ok_or(PcmError::MissingCounterfactual { index: i })
    }

    pub fn validate(&self) -> ValidationReport {
        validate_dataset(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    Empty,
    ZeroDimension,
    DimensionMismatch { index: usize, found: usize },
    CoordinateOutOfRange { index: usize, axis: usize, value: f64 },
    NonFiniteOutcome { index: usize },
    NonFiniteCounterfactual { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n: usize,
    pub issues: Vec<Issue>,
    pub frac_with_counterfactual: f64,
    pub frac_treated: f64,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    /// Turns a dirty report into an error naming the first issue.
    pub fn into_result(self) -> Result<()> {
        match self.issues.first() {
            None => Ok(()),
            Some(issue) => Err(PcmError::InvalidDataset(format!(
                "{issue:?} ({} issue(s) total)",
                self.issues.len()
            ))),
        }
    }
}

pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let n = dataset.n();
    let mut issues = Vec::new();
    if n == 0 {
        issues.push(Issue::Empty);
    }
    if dataset.d == 0 {
        issues.push(Issue::ZeroDimension);
    }
    let mut with_cf = 0usize;
    let mut treated = 0usize;
    for (index, s) in dataset.subjects.iter().enumerate() {
        if s.x.len() != dataset.d {
            issues.push(Issue::DimensionMismatch {
                index,
                found: s.x.len(),
            });
        }
        for (axis, &value) in s.x.iter().enumerate() {
            // NaN fails the range check too.
            if !(0.0..=1.0).contains(&value) {
                issues.push(Issue::CoordinateOutOfRange { index, axis, value });
            }
        }
        if !s.y.is_finite() {
            issues.push(Issue::NonFiniteOutcome { index });
        }
        if let Some(ybar) = s.ybar {
            with_cf += 1;
            if !ybar.is_finite() {
                issues.push(Issue::NonFiniteCounterfactual { index });
            }
        }
        treated += usize::from(s.t);
    }
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    ValidationReport {
        n,
        issues,
        frac_with_counterfactual: frac(with_cf),
        frac_treated: frac(treated),
    }
}

/// Fitted effect levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelModel {
    /// Level effects in ascending order; `ell_hat()` is its length.
    pub mu_hat: Vec<f64>,
    /// Level of each dataset subject, `None` for subjects outside the fitted population.
    pub assignment: Vec<Option<usize>>,
    /// `(k, err(k))` for every k examined during level selection.
    pub err_curve: Vec<(usize, f64)>,
    pub threshold_used: f64,
}

impl LevelModel {
    pub fn ell_hat(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.ell_hat()];
        for c in self.assignment.iter().flatten() {
            sizes[*c] += 1;
        }
        sizes
    }

    pub fn num_assigned(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }

    /// Predicted effect for subject `i`.
    pub fn predicted_effect(&self, i: usize) -> Option<f64> {
        self.assignment[i].map(|c| self.mu_hat[c])
    }

    pub fn err_at(&self, k: usize) -> Option<f64> {
        self.err_curve.iter().find(|(kk, _)| *kk == k).map(|(_, e)| *e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreclusterMode {
    Box,
    Kmeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnK {
    /// `ceil(sqrt(number of controls))`
    Auto,
    Fixed(usize),
}

/// Where the counterfactual outcomes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfMode {
    /// Read `ybar` from the data.
    Given,
    /// Estimate treated counterfactuals by k-NN regression on the controls.
    Knn(KnnK),
    /// No counterfactuals: cluster effects are treated-minus-control mean differences.
    ControlDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcmConfig {
    pub precluster: PreclusterMode,
    pub cf_mode: CfMode,
    pub em_iters: usize,
    pub tau_multiplier: f64,
    pub k_max: usize,
    pub seed: u64,
}

impl Default for PcmConfig {
    fn default() -> Self {
        Self {
            precluster: PreclusterMode::Box,
            cf_mode: CfMode::Given,
            em_iters: 1,
            tau_multiplier: 1.0,
            k_max: 10,
            seed: 0,
        }
    }
}

impl PcmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_multiplier.is_finite() && self.tau_multiplier > 0.0) {
            return Err(PcmError::InvalidConfig(format!(
                "tau_multiplier must be positive, got {}",
                self.tau_multiplier
            )));
        }
        if self.k_max == 0 {
            return Err(PcmError::InvalidConfig("k_max must be at least 1".into()));
        }
        if let CfMode::Knn(KnnK::Fixed(0)) = self.cf_mode {
            return Err(PcmError::InvalidConfig("k-NN k must be at least 1".into()));
        }
        Ok(())
    }
}
