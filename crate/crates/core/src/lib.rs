//! Core of the SafeKV simulator: a privacy-aware radix KV-cache index,
//! tiered privacy detection, an access-entropy monitor, a discrete-event
//! serving simulator, workload generation and a timing-probe adversary.

pub mod adversary;
pub mod cache_index;
pub mod detection;
pub mod error;
pub mod monitor;
pub mod sim;
pub mod types;
pub mod workload;

pub use cache_index::{CacheIndex, CacheNode, IndexConfig, MatchResult, NodeId};
pub use error::{CacheError, ConfigError, DetectionError, SimError, WorkloadError};
pub use types::{
    KvHandle, OwnerClass, PolicyId, SensitivityLabel, Tier, TokenId, TokenSeq, UserId,
};
pub use adversary::{run_campaign, AttackSettings, CampaignReport};
pub use detection::{PatternSet, RuleEngine};
pub use monitor::{Monitor, MonitorConfig};
pub use sim::{run_scenario, RunArtifact, ScenarioConfig, Simulator};
pub use workload::{generate, Workload, WorkloadSpec};
