use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcmError {
    #[error("subject has no counterfactual outcome")]
    NoCounterfactual,

    #[error("subject {index} has no counterfactual outcome")]
    MissingCounterfactual { index: usize },

    #[error("k-NN needs at least {needed} control subjects, found {available}")]
    InsufficientControls { needed: usize, available: usize },

    #[error("cluster has no {missing} subjects")]
    OneSidedCluster { missing: &'static str },

    #[error("n = {n} is too small for dimension {d} (need n >= 2^d)")]
    TooFewSubjects { n: usize, d: usize },

    #[error("k = {k} is out of range for {len} values")]
    KOutOfRange { k: usize, len: usize },

    #[error("subject {index} has no true level")]
    MissingTrueLevel { index: usize },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = PcmError> = std::result::Result<T, E>;
