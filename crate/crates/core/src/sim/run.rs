use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, SimConfig};
use super::metrics::{RequestRecord, RunMetrics, SimEvent};
use super::Simulator;
use crate::detection::RuleEngine;
use crate::adversary::{run_campaign, AttackSettings, AttackTarget, CampaignReport};
use crate::error::SimError;
use crate::types::{PolicyId, TokenSeq};
use crate::workload::{generate, ReuseStats, Workload};

/// Everything one policy run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub policy: PolicyId,
    pub metrics: RunMetrics,
    pub records: Vec<RequestRecord>,
    pub events: Vec<SimEvent>,
    pub attack: Option<CampaignReport>,
}

/// Result of `run_scenario`: one run per policy over a shared workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config: ScenarioConfig,
    pub workload_reuse: ReuseStats,
    pub runs: Vec<PolicyRun>,
}

/// The first `n` planted secrets (by victim arrival) as attack targets.
pub fn attack_targets(w: &Workload, settings: &AttackSettings) -> Vec<AttackTarget> {
    w.secrets
        .iter()
        .filter(|s| s.candidate_sets.iter().any(|c| c.len() > 1))
        .take(settings.n_secrets)
        .filter_map(|s| {
            let req = w.request(s.request_id)?;
            Some(AttackTarget {
                request_id: s.request_id,
                victim: s.user,
                family: format!("{:?}", s.family),
                start_ms: req.arrival_ms + settings.lead_ms,
                known_prefix: s.known_prefix.clone(),
                candidate_sets: s.candidate_sets.clone(),
                truth: TokenSeq::from(s.secret.as_slice()),
            })
        })
        .collect()
}

/// Simulate one policy over a workload, optionally under attack.
pub fn run_policy(
    w: &Workload,
    cfg: SimConfig,
    attack: Option<&AttackSettings>,
) -> Result<PolicyRun, SimError> {
    run_policy_with_rules(w, cfg, attack, Arc::new(RuleEngine::default()))
}

/// `run_policy` with an explicit Tier-1 rule engine.
pub fn run_policy_with_rules(
    w: &Workload,
    cfg: SimConfig,
    attack: Option<&AttackSettings>,
    rules: Arc<RuleEngine>,
) -> Result<PolicyRun, SimError> {
    let policy = cfg.policy;
    let mut sim = Simulator::with_rules(cfg, rules)?;
    sim.load(&w.requests);
    let report = attack.map(|a| {
        let targets = attack_targets(w, a);
        run_campaign(&mut sim, &targets, a)
    });
    sim.finish();
    Ok(PolicyRun {
        policy,
        metrics: sim.metrics(),
        records: sim.records().to_vec(),
        events: sim.events().to_vec(),
        attack: report,
    })
}

/// Validate, generate the shared workload, then run every policy on it.
/// Policy runs are independent and execute on separate threads.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunArtifact, SimError> {
    run_scenario_with_rules(cfg, Arc::new(RuleEngine::default()))
}

/// `run_scenario` with an explicit Tier-1 rule engine shared by all policies.
pub fn run_scenario_with_rules(
    cfg: &ScenarioConfig,
    rules: Arc<RuleEngine>,
) -> Result<RunArtifact, SimError> {
    cfg.validate()?;
    let w = generate(&cfg.workload_spec())?;
    let attack = cfg.attack.clone().map(|a| AttackSettings {
        seed: cfg.seed,
        ..a
    });
    let runs: Vec<Result<PolicyRun, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .policies
            .iter()
            .map(|&p| {
                let sim_cfg = cfg.sim_config(p);
                let (w, attack, rules) = (&w, attack.as_ref(), rules.clone());
                s.spawn(move || run_policy_with_rules(w, sim_cfg, attack, rules))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("policy run panicked"))
            .collect()
    });
    Ok(RunArtifact {
        config: cfg.clone(),
        workload_reuse: w.reuse,
        runs: runs.into_iter().collect::<Result<_, _>>()?,
    })
}
