//! End-to-end fit: counterfactuals, pre-clustering, level selection and
//! merge, then smoothing and reassignment.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::counterfactual::{attach_counterfactuals, effects_for, Effects};
use crate::domain::{Dataset, LevelModel, PcmConfig};
use crate::error::{PcmError, Result};
use crate::merge1d::{merge_to_subpopulations, select_num_levels};
use crate::precluster::{epsilon_of, partition, PreClustering};
use crate::refine::{run_em, SmoothingIndex};

/// Wall-clock per stage, in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub counterfactual: f64,
    pub precluster: f64,
    pub merge: f64,
    pub refine: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Rows in the input dataset.
    pub n_subjects: usize,
    /// Subjects that entered the fit (those with an effect).
    pub n_fitted: usize,
    /// Side of the smoothing cube (and of the pre-clustering grid in box mode).
    pub epsilon: f64,
    pub n_clusters: usize,
    pub dropped_clusters: usize,
    pub tau: f64,
    /// False when no k up to `k_max` reached the threshold.
    pub converged: bool,
    /// Level count chosen by the threshold, before any empty levels were removed.
    pub ell_hat_selected: usize,
    pub removed_empty_levels: usize,
    pub stage_ms: StageTimes,
}

/// Everything a fit produces. Per-subject vectors are index-aligned with the
/// input dataset.
#[derive(Debug, Clone)]
pub struct PcmFit {
    pub model: LevelModel,
    /// Level model straight after the merge, before reassignment.
    pub merged: LevelModel,
    pub preclustering: PreClustering,
    pub effects: Effects,
    pub smoothed: Vec<Option<f64>>,
    pub diagnostics: Diagnostics,
}

impl PcmFit {
    /// Raw ITE of subject `i`, if it has one.
    pub fn ite(&self, i: usize) -> Option<f64> {
        self.effects.ite(i)
    }

    pub fn ites(&self) -> Vec<Option<f64>> {
        (0..self.effects.len()).map(|i| self.effects.ite(i)).collect()
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub fn run_pcm(dataset: &Dataset, config: &PcmConfig) -> Result<PcmFit> {
    config.validate()?;
    dataset.validate().into_result()?;
    let start = Instant::now();
    let mut times = StageTimes::default();

    let t = Instant::now();
    let working = attach_counterfactuals(dataset, config.cf_mode)?;
    let effects = effects_for(&working, config.cf_mode);
    let n_fitted = effects.eligible().len();
    if n_fitted == 0 {
        return Err(PcmError::InvalidDataset(
            "no subject has a treatment effect to fit".into(),
        ));
    }
    times.counterfactual = ms(t);

    let t = Instant::now();
    let pre = partition(&working, &effects, config.precluster, config.seed)?;
    if pre.is_empty() {
        return Err(PcmError::InvalidDataset(
            "every pre-cluster was dropped; no cluster has both arms".into(),
        ));
    }
    times.precluster = ms(t);

    let t = Instant::now();
    let selection = select_num_levels(
        &pre.atts(),
        n_fitted,
        dataset.d,
        config.tau_multiplier,
        config.k_max,
    )?;
    let (mut merged, mut removed) =
        merge_to_subpopulations(&pre, &selection.clustering, &effects)?;
    merged.err_curve = selection.err_curve.clone();
    merged.threshold_used = selection.tau;
    times.merge = ms(t);

    let t = Instant::now();
    let epsilon = epsilon_of(n_fitted, dataset.d)?;
    let smoothed = SmoothingIndex::build(&working, &effects, epsilon).smooth_all();
    let (model, em_removed) = run_em(merged.clone(), &smoothed, &effects, config.em_iters);
    removed += em_removed;
    times.refine = ms(t);
    times.total = ms(start);

    let diagnostics = Diagnostics {
        n_subjects: dataset.n(),
        n_fitted,
        epsilon,
        n_clusters: pre.len(),
        dropped_clusters: pre.dropped,
        tau: selection.tau,
        converged: selection.converged,
        ell_hat_selected: selection.ell_hat,
        removed_empty_levels: removed,
        stage_ms: times,
    };
    Ok(PcmFit {
        model,
        merged,
        preclustering: pre,
        effects,
        smoothed,
        diagnostics,
    })
}
