//! Evaluation against known truth: subject-level MAE, confusion matrices,
//! pre-cluster homogeneity and the oracle-threshold baseline.
//!
//! Fitted levels are matched to true levels by rank: fitted level `b` is
//! compared with true level `b`, both being in ascending effect order.

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, LevelModel};
use crate::error::{PcmError, Result};
use crate::precluster::PreClustering;

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

fn true_level(dataset: &Dataset, i: usize, n_levels: usize) -> Result<usize> {
    let c = dataset.subjects[i]
        .c_true
        .ok_or(PcmError::MissingTrueLevel { index: i })?;
    if c >= n_levels {
        return Err(PcmError::InvalidDataset(format!(
            "subject {i} has true level {c} but only {n_levels} true effects were given"
        )));
    }
    Ok(c)
}

fn check_len(model: &LevelModel, dataset: &Dataset) -> Result<()> {
    if model.assignment.len() != dataset.n() {
        return Err(PcmError::InvalidDataset(format!(
            "model covers {} subjects, dataset has {}",
            model.assignment.len(),
            dataset.n()
        )));
    }
    Ok(())
}

/// `|true_mu[c_true] - mu_hat[assigned]|` over the assigned subjects.
pub fn mae(model: &LevelModel, dataset: &Dataset, true_mu: &[f64]) -> Result<MeanStd> {
    check_len(model, dataset)?;
    let mut errs = Vec::with_capacity(model.num_assigned());
    for (i, a) in model.assignment.iter().enumerate() {
        if let Some(b) = a {
            let c = true_level(dataset, i, true_mu.len())?;
            errs.push((true_mu[c] - model.mu_hat[*b]).abs());
        }
    }
    Ok(MeanStd::of(&errs))
}

/// Row-normalised `n_true × ell_hat` matrix over the assigned subjects.
/// A true level with no assigned subjects gets a zero row.
pub fn confusion(model: &LevelModel, dataset: &Dataset, n_true: usize) -> Result<Vec<Vec<f64>>> {
    check_len(model, dataset)?;
    let mut counts = vec![vec![0usize; model.ell_hat()]; n_true];
    for (i, a) in model.assignment.iter().enumerate() {
        if let Some(b) = a {
            counts[true_level(dataset, i, n_true)?][*b] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.into_iter()
                .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect())
}

/// Unweighted mean over clusters of the majority true level's share.
pub fn homogeneity(pre: &PreClustering, dataset: &Dataset) -> Result<f64> {
    if pre.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for cluster in &pre.clusters {
        let mut counts: Vec<usize> = Vec::new();
        for &i in &cluster.members {
            let c = dataset.subjects[i]
                .c_true
                .ok_or(PcmError::MissingTrueLevel { index: i })?;
            if c >= counts.len() {
                counts.resize(c + 1, 0);
            }
            counts[c] += 1;
        }
        let majority = counts.iter().copied().max().unwrap_or(0);
        total += majority as f64 / cluster.members.len() as f64;
    }
    Ok(total / pre.len() as f64)
}

/// Classifies raw ITEs by the midpoints of the (ascending) true effects.
/// A value on a midpoint goes to the lower level.
pub fn bayes_baseline(ites: &[Option<f64>], true_mu: &[f64]) -> LevelModel {
    let mids: Vec<f64> = true_mu.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let assignment = ites
        .iter()
        .map(|e| e.map(|v| mids.iter().take_while(|&&m| v > m).count()))
        .collect();
    LevelModel {
        mu_hat: true_mu.to_vec(),
        assignment,
        err_curve: Vec::new(),
        threshold_used: f64::NAN,
    }
}

/// `|true_mu[c_true] - ITE|`: the raw ITE used directly as the prediction.
pub fn raw_ite_mae(ites: &[Option<f64>], dataset: &Dataset, true_mu: &[f64]) -> Result<MeanStd> {
    let mut errs = Vec::new();
    for (i, e) in ites.iter().enumerate() {
        if let Some(v) = e {
            let c = true_level(dataset, i, true_mu.len())?;
            errs.push((true_mu[c] - v).abs());
        }
    }
    Ok(MeanStd::of(&errs))
}

/// Equal-width bins over `[min, max]`; the maximum lands in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        assert!(bins >= 1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; bins];
        if values.is_empty() {
            return Self {
                lo: f64::NAN,
                hi: f64::NAN,
                counts,
            };
        }
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn edges(&self) -> Vec<f64> {
        let bins = self.counts.len();
        (0..=bins)
            .map(|b| self.lo + (self.hi - self.lo) * b as f64 / bins as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    /// Raw ITE as the per-subject prediction.
    pub raw_ite_mae: MeanStd,
    /// Level effect of the threshold class as the prediction.
    pub level_mae: MeanStd,
    pub confusion: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_evaluated: usize,
    pub ell_hat: usize,
    pub ell_true: usize,
    /// Set when the fitted and true level counts differ.
    pub level_count_mismatch: bool,
    pub mae: MeanStd,
    pub confusion: Vec<Vec<f64>>,
    pub mu_hat: Vec<f64>,
    pub true_mu: Vec<f64>,
    pub homogeneity: Option<f64>,
    pub baseline: Option<BaselineReport>,
}

/// Full report. `pre` adds homogeneity and `ites` adds the threshold baseline.
pub fn evaluate(
    model: &LevelModel,
    dataset: &Dataset,
    true_mu: &[f64],
    pre: Option<&PreClustering>,
    ites: Option<&[Option<f64>]>,
) -> Result<EvalReport> {
    let baseline = match ites {
        Some(ites) => {
            let b = bayes_baseline(ites, true_mu);
            Some(BaselineReport {
                raw_ite_mae: raw_ite_mae(ites, dataset, true_mu)?,
                level_mae: mae(&b, dataset, true_mu)?,
                confusion: confusion(&b, dataset, true_mu.len())?,
            })
        }
        None => None,
    };
    Ok(EvalReport {
        n_evaluated: model.num_assigned(),
        ell_hat: model.ell_hat(),
        ell_true: true_mu.len(),
        level_count_mismatch: model.ell_hat() != true_mu.len(),
        mae: mae(model, dataset, true_mu)?,
        confusion: confusion(model, dataset, true_mu.len())?,
        mu_hat: model.mu_hat.clone(),
        true_mu: true_mu.to_vec(),
        homogeneity: pre.map(|p| homogeneity(p, dataset)).transpose()?,
        baseline,
    })
}
