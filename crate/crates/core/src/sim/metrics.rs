use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache_index::IndexCounters;
use crate::detection::DetectionStats;
use crate::monitor::AnomalyAction;
use crate::types::PolicyId;

/// Bumped whenever an artifact field changes meaning or disappears.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserKind {
    Benign,
    Attacker,
}

/// One served (or dropped) request. `user_kind` is simulator metadata and
/// never reaches the cache or detection code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: u64,
    pub user: u64,
    pub user_kind: UserKind,
    pub policy: PolicyId,
    pub arrival_ms: f64,
    pub input_tokens: usize,
    /// 64-bit digest of the input token sequence, hex.
    pub input_digest: String,
    pub matched_tokens: usize,
    /// Matched tokens created by the same user / by other users.
    pub intra_matched: usize,
    pub inter_matched: usize,
    pub inserted_tokens: usize,
    pub ttft_ms: f64,
    pub epoch: u64,
    pub dropped: bool,
}

/// Line-delimited entries of `events.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    Anomaly {
        t_ms: f64,
        node: u64,
        action: AnomalyAction,
        entropy_now: f64,
        entropy_prev: f64,
        u_pre: u64,
        epoch: u64,
    },
    /// A block carrying ground-truth sensitive tokens was finalized Public.
    Leak {
        t_ms: f64,
        node: u64,
        request_id: u64,
        resolved_tier: u8,
    },
    Eviction {
        t_ms: f64,
        request_id: u64,
        handles: usize,
        tokens: u64,
    },
    Dropped {
        t_ms: f64,
        request_id: u64,
        reason: String,
    },
    /// The detection queue was full; the block stays private.
    Saturated { t_ms: f64, request_id: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TtftSummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl TtftSummary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: percentile(&v, 50.0),
            p95: percentile(&v, 95.0),
            p99: percentile(&v, 99.0),
            max: v[v.len() - 1],
        }
    }
}

/// `metrics.json`: aggregates over benign requests unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub format_version: u32,
    pub policy: PolicyId,
    pub requests: usize,
    pub dropped: usize,
    /// Attacker probes served (not part of the aggregates below).
    pub probes: usize,
    pub input_tokens: u64,
    pub matched_tokens: u64,
    pub hit_rate: f64,
    pub intra_reuse: f64,
    pub inter_reuse: f64,
    pub ttft: TtftSummary,
    /// Input tokens per simulated second between first arrival and last
    /// first-token time.
    pub throughput_tokens_per_s: f64,
    pub index: IndexCounters,
    pub detection: Option<DetectionStats>,
    pub anomalies: usize,
    pub downgrades: usize,
    pub restricts: usize,
    pub leak_events: usize,
    pub saturated: usize,
    pub final_labels: BTreeMap<String, usize>,
    pub live_nodes: usize,
}
