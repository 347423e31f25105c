use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::AttackSettings;
use crate::cache_index::{CapacityConfig, IndexConfig};
use crate::detection::{DetectionConfig, Tier1Mode};
use crate::error::{ConfigError, FieldError};
use crate::monitor::MonitorConfig;
use crate::types::{PolicyId, Tier};
use crate::workload::WorkloadSpec;

/// TTFT cost model: `t_base + c_prefill * uncached + sum(tier penalty *
/// reloaded tokens) + noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub t_base: f64,
    pub c_prefill: f64,
    /// Per-token reload cost for HBM, DRAM and SSD handles.
    pub tier_penalty: [f64; 3],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            t_base: 10.0,
            c_prefill: 1.0,
            tier_penalty: [0.0, 0.2, 0.5],
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl CostModel {
    pub fn penalty(&self, tier: Tier) -> f64 {
        self.tier_penalty[tier.index()]
    }

    /// Noiseless TTFT for `input` tokens with `matched` of them reused from
    /// HBM.
    pub fn noiseless(&self, input: usize, matched: usize) -> f64 {
        self.t_base + self.c_prefill * (input - matched) as f64
    }

    fn check(&self, errs: &mut Vec<FieldError>) {
        let [hbm, dram, ssd] = self.tier_penalty;
        if !(self.t_base >= 0.0) {
            errs.push(field("cost.t_base", "must be >= 0"));
        }
        if !(hbm >= 0.0 && dram >= hbm && ssd >= dram && self.c_prefill > ssd) {
            errs.push(field(
                "cost.tier_penalty",
                "need 0 <= hbm <= dram <= ssd < c_prefill",
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            errs.push(field("cost.noise_sigma", "must be >= 0"));
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulingMode {
    /// Arrival order, request id breaks ties.
    #[default]
    Fcfs,
    /// Longest current prefix match first.
    Lpm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacitySettings {
    pub capacity: CapacityConfig,
    /// Demote to DRAM/SSD on pressure instead of freeing.
    pub tiered: bool,
}

impl Default for CapacitySettings {
    fn default() -> Self {
        Self {
            capacity: CapacityConfig::tokens(1 << 22, 0, 0),
            tiered: false,
        }
    }
}

impl CapacitySettings {
    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            capacity: self.capacity,
            tiered: self.tiered,
        }
    }
}

/// Everything one simulated run needs besides the workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub policy: PolicyId,
    pub cost: CostModel,
    pub detection: DetectionConfig,
    pub monitor: MonitorConfig,
    pub capacities: CapacitySettings,
    pub scheduling: SchedulingMode,
    /// Tokens per classified block.
    pub block_tokens: usize,
    /// Length of the shared prefix made public under PublicSystemPrompt.
    pub public_prefix_tokens: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            policy: PolicyId::SafeKV,
            cost: CostModel::default(),
            detection: DetectionConfig::default(),
            monitor: MonitorConfig::default(),
            capacities: CapacitySettings::default(),
            scheduling: SchedulingMode::Fcfs,
            block_tokens: 16,
            public_prefix_tokens: 0,
        }
    }
}

impl SimConfig {
    pub fn with_policy(policy: PolicyId) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        self.check(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    fn check(&self, errs: &mut Vec<FieldError>) {
        self.cost.check(errs);
        if let Err(e) = self.detection.validate() {
            errs.push(field("detection", &e.to_string()));
        }
        if !(self.detection.drain_interval_ms > 0.0) {
            errs.push(field("detection.drain_interval_ms", "must be positive"));
        }
        if !(self.monitor.epoch_interval_ms > 0.0) {
            errs.push(field("monitor.epoch_interval_ms", "must be positive"));
        }
        if !(self.monitor.entropy_jump >= 0.0 && self.monitor.entropy_jump <= 1.0) {
            errs.push(field("monitor.entropy_jump", "must lie in [0, 1]"));
        }
        if let Err(e) = self.capacities.capacity.resolve() {
            errs.push(field("capacities.capacity", &e.to_string()));
        }
        if self.block_tokens == 0 {
            errs.push(field("block_tokens", "must be positive"));
        }
    }

    /// Seed every random stream of the run from one master seed.
    pub fn reseed(&mut self, seed: u64) {
        self.cost.seed = seed;
        if let Tier1Mode::Mock(s) = &mut self.detection.tier1 {
            s.seed = seed;
        }
        self.detection.tier2.seed = seed;
        self.detection.tier3.seed = seed;
    }
}

fn field(name: &str, msg: &str) -> FieldError {
    FieldError {
        field: name.to_string(),
        message: msg.to_string(),
    }
}

/// Declarative description of a run: workload, policies to compare, cost,
/// detectors, monitor, capacities and an optional attack campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub workload: WorkloadSpec,
    /// Policies run on the same generated workload.
    pub policies: Vec<PolicyId>,
    pub cost: CostModel,
    pub detection: DetectionConfig,
    pub monitor: MonitorConfig,
    pub capacities: CapacitySettings,
    pub scheduling: SchedulingMode,
    pub block_tokens: usize,
    pub attack: Option<AttackSettings>,
    pub output_dir: PathBuf,
    /// Master seed; overrides the workload, cost, detector and attack seeds.
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            name: "scenario".into(),
            workload: WorkloadSpec::default(),
            policies: vec![PolicyId::GlobalShare, PolicyId::CachePartition, PolicyId::SafeKV],
            cost: sim.cost,
            detection: sim.detection,
            monitor: sim.monitor,
            capacities: sim.capacities,
            scheduling: sim.scheduling,
            block_tokens: sim.block_tokens,
            attack: None,
            output_dir: PathBuf::from("runs"),
            seed: 7,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replace the master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Effective workload spec (master seed applied).
    pub fn workload_spec(&self) -> WorkloadSpec {
        WorkloadSpec {
            seed: self.seed,
            ..self.workload.clone()
        }
    }

    /// Effective per-policy simulator config (master seed applied).
    pub fn sim_config(&self, policy: PolicyId) -> SimConfig {
        let mut s = SimConfig {
            policy,
            cost: self.cost,
            detection: self.detection.clone(),
            monitor: self.monitor,
            capacities: self.capacities,
            scheduling: self.scheduling,
            block_tokens: self.block_tokens,
            public_prefix_tokens: self.workload.system_prompt_tokens,
        };
        s.reseed(self.seed);
        s
    }

    /// Check every field; all problems are reported together.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if self.policies.is_empty() {
            errs.push(field("policies", "at least one policy is required"));
        }
        let mut seen = self.policies.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            errs.push(field("policies", "duplicate policy"));
        }
        if let Err(e) = self.workload.validate() {
            errs.push(field("workload", &e.to_string()));
        }
        self.sim_config(PolicyId::SafeKV).check(&mut errs);
        if let Some(a) = &self.attack {
            for (f, m) in a.problems() {
                errs.push(field(&format!("attack.{f}"), &m));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}
