use thiserror::Error;

use crate::cache_index::NodeId;
use crate::types::{SensitivityLabel, Tier};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("capacity exhausted in {tier:?}: needed {needed} tokens, could free {freed}")]
    CapacityExhausted { tier: Tier, needed: u64, freed: u64 },
    #[error("chain at {0:?} is not compressible: {1}")]
    NotCompressible(NodeId, &'static str),
    #[error("illegal label transition {from:?} -> {to:?}")]
    IllegalTransition {
        from: SensitivityLabel,
        to: SensitivityLabel,
    },
    #[error("unpin underflow on {0:?}")]
    Underflow(NodeId),
    #[error("unknown node {0:?}")]
    UnknownNode(NodeId),
    #[error("cannot demote a handle already on SSD")]
    AlreadyLowestTier,
    #[error("empty token sequence")]
    EmptySequence,
    #[error("invalid capacity configuration: {0}")]
    InvalidCapacity(String),
}

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("pattern config parse error: {0}")]
    Parse(String),
    #[error("rule `{rule_id}` failed to compile: {message}")]
    Compile { rule_id: String, message: String },
    #[error("duplicate rule_id `{0}`")]
    DuplicateRule(String),
    #[error("detector unavailable: {0}")]
    DetectorUnavailable(String),
    #[error("invalid detector spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("infeasible workload spec: {0}")]
    InfeasibleSpec(String),
    #[error("corpus error: {0}")]
    Corpus(String),
}

/// Field-level configuration diagnostic.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("artifact i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact encoding: {0}")]
    Encode(String),
}
