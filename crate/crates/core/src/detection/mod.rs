//! Three-tier privacy detection: a rule engine, a fast classifier and a
//! context-aware validator, run asynchronously off the serving path.

mod external;
mod pipeline;
mod rules;
mod threshold;
mod tiers;
mod trie;

use serde::{Deserialize, Serialize};

pub use external::{ExternalDetector, ExternalSpec};
pub use pipeline::{
    Classification, Classifier, Completed, DetectionConfig, DetectionPipeline, DetectionStats,
    Job, Tier1Mode, WorkerHandle,
};
pub use rules::{PatternConfig, PatternRule, PatternSet, RuleEngine, RuleKind, RuleMatch};
pub use threshold::{adjust_threshold, AlertLevel, ThresholdParams, ThresholdState};
pub use tiers::{default_latency, Detector, DetectorMode, DetectorSpec, LatencyModel, DEFAULT_FNR};
pub use trie::BlacklistTrie;

use crate::types::UserId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub sensitive: bool,
    pub tier: u8,
    pub score: f64,
    pub categories: Vec<String>,
    /// This tier is not confident; the next tier should run.
    pub escalate: bool,
}

impl DetectionVerdict {
    pub(crate) fn tier1(categories: Vec<String>) -> Self {
        let sensitive = !categories.is_empty();
        Self {
            sensitive,
            tier: 1,
            score: if sensitive { 1.0 } else { 0.0 },
            categories,
            escalate: !sensitive,
        }
    }

    pub(crate) fn benign(tier: u8, score: f64) -> Self {
        Self {
            sensitive: false,
            tier,
            score,
            categories: Vec::new(),
            escalate: false,
        }
    }
}

/// Ground truth for one block, as planted by the workload generator.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTruth {
    /// Sensitive on its own.
    pub sensitive: bool,
    /// Sensitive only when the history contains this cue.
    pub context_cue: Option<String>,
    pub categories: Vec<String>,
}

impl BlockTruth {
    pub fn sensitive_given(&self, history: &[String]) -> bool {
        self.sensitive
            || self
                .context_cue
                .as_deref()
                .is_some_and(|cue| history.iter().any(|h| h.contains(cue)))
    }
}

/// Everything the tiers may look at for one block.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockInput {
    pub block_id: u64,
    pub user: UserId,
    /// The block's own text.
    pub text: String,
    /// Text of the request preceding the block; Tier-1 scans across the
    /// boundary so patterns split between blocks are still caught.
    pub prefix_text: String,
    /// Earlier turns of the same user's session.
    pub history: Vec<String>,
    pub truth: BlockTruth,
}
