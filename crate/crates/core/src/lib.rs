//! Pre-cluster and merge: recover discrete treatment-effect levels from a
//! trial whose treated population mixes several subpopulations.
//!
//! The fit runs in five stages:
//! 1. partition feature space into about `sqrt(n)` small clusters ([`precluster`]),
//! 2. average the individual effects inside each cluster,
//! 3. group the cluster averages with exact 1-D k-means and pick the level
//!    count by an error threshold ([`merge1d`]),
//! 4. estimate each level's effect from all of its subjects,
//! 5. reassign subjects by their locally smoothed effect ([`refine`]).
//!
//! [`pipeline::run_pcm`] chains them.

pub mod cli;
pub mod counterfactual;
pub mod domain;
pub mod error;
pub mod grid;
pub mod merge1d;
pub mod metrics;
pub mod pipeline;
pub mod precluster;
pub mod refine;
pub mod rng;
pub mod synthgen;

pub use domain::{CfMode, Dataset, KnnK, LevelModel, PcmConfig, PreclusterMode, Subject};
pub use error::{PcmError, Result};
pub use pipeline::{run_pcm, PcmFit};
pub use synthgen::{generate, SynthSpec};
