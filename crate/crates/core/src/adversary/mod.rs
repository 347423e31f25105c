//! Black-box timing adversary: calibrates a hit threshold, reconstructs a
//! secret token by token from TTFT alone, and runs campaigns over many
//! planted secrets. It only ever talks to the system through
//! [`ProbeTarget`].

use std::collections::BinaryHeap;
use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{common_prefix_len, TokenId, TokenSeq, UserId};

/// What a client observes for one request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ttft_ms: f64,
    /// Output-length proxy; constant for prefill-only probes.
    pub output_tokens: u32,
}

/// The only channel between the adversary and the serving system.
pub trait ProbeTarget {
    /// Issue `tokens` as `user` at virtual time `at_ms` (clamped to now).
    fn probe(&mut self, at_ms: f64, user: UserId, tokens: &TokenSeq) -> Observation;
}

/// First user id handed out to attacker identities.
pub const ATTACKER_ID_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum HitThreshold {
    /// Calibrated per campaign from a self-cached / fresh probe pair.
    Adaptive,
    Fixed { ms: f64 },
}

/// How the attacker keeps its own probes from looking like victim hits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PollutionStrategy {
    /// Every probe comes from an identity that never probed before.
    #[default]
    FreshIdentities,
    /// Rotate a fixed identity pool and discount the prefix the attacker
    /// itself has already sent.
    CalibrationDifferencing,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSchedule {
    #[default]
    Uniform,
    /// Round gaps drawn uniformly from [0.5, 1.5] x interval.
    Jittered,
}

/// Campaign-level attack settings (the `attack` block of a scenario).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSettings {
    /// Number of planted secrets to attack (first n by arrival).
    pub n_secrets: usize,
    pub hit_threshold: HitThreshold,
    pub strategy: PollutionStrategy,
    /// Identity pool size for differencing; ignored for fresh identities.
    pub identities: usize,
    pub probe_schedule: ProbeSchedule,
    /// Gap between probing rounds (one round = one secret position).
    pub probe_interval_ms: f64,
    /// Delay between the victim's request and the first probe.
    pub lead_ms: f64,
    /// Probe budget per secret.
    pub max_probes: usize,
    /// Length of the calibration probe pair.
    pub calibration_tokens: usize,
    pub seed: u64,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            n_secrets: 200,
            hit_threshold: HitThreshold::Adaptive,
            strategy: PollutionStrategy::FreshIdentities,
            identities: 8,
            probe_schedule: ProbeSchedule::Uniform,
            probe_interval_ms: 50.0,
            lead_ms: 2000.0,
            max_probes: 1000,
            calibration_tokens: 100,
            seed: 0,
        }
    }
}

impl AttackSettings {
    /// Field-level problems, empty when valid.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut p = Vec::new();
        if self.n_secrets == 0 {
            p.push(("n_secrets", "must be positive".to_string()));
        }
        if self.identities == 0 {
            p.push(("identities", "need at least one identity".to_string()));
        }
        if !(self.probe_interval_ms >= 0.0) {
            p.push(("probe_interval_ms", "must be >= 0".to_string()));
        }
        if !(self.lead_ms >= 0.0) {
            p.push(("lead_ms", "must be >= 0".to_string()));
        }
        if self.max_probes == 0 {
            p.push(("max_probes", "must be positive".to_string()));
        }
        if self.calibration_tokens == 0 {
            p.push(("calibration_tokens", "must be positive".to_string()));
        }
        if let HitThreshold::Fixed { ms } = self.hit_threshold {
            if !(ms > 0.0) {
                p.push(("hit_threshold.ms", "must be positive".to_string()));
            }
        }
        p
    }
}

/// Per-secret attack input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub known_prefix: TokenSeq,
    pub candidate_sets: Vec<Vec<TokenId>>,
    pub hit_threshold: HitThreshold,
    pub identities: Vec<UserId>,
    pub strategy: PollutionStrategy,
    pub probe_schedule: ProbeSchedule,
    pub max_probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub recovered: TokenSeq,
    /// Filled in by whoever knows the truth; empty from `reconstruct`.
    pub per_position_correct: Vec<bool>,
    pub probes_used: usize,
    pub success: bool,
    /// Positions decided without any probe classified as a hit.
    pub low_confidence: Vec<bool>,
    /// A hit signal seen earlier vanished in a later round.
    pub downgraded_mid_attack: bool,
    /// Probes issued after the signal vanished.
    pub stale_probes: usize,
    pub budget_exhausted: bool,
}

impl AttackResult {
    /// Score against the true secret.
    pub fn score(&mut self, truth: &TokenSeq) {
        self.per_position_correct = truth
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, t)| self.recovered.as_slice().get(i) == Some(t))
            .collect();
        self.success = self.per_position_correct.iter().all(|&c| c)
            && self.recovered.len() == truth.len();
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("probe budget exhausted after {} of {total} positions", partial.recovered.len())]
    BudgetExhausted {
        partial: Box<AttackResult>,
        total: usize,
    },
}

/// Linear TTFT model recovered from one fresh / self-cached probe pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub len: usize,
    pub t_hit: f64,
    pub t_miss: f64,
}

impl Calibration {
    /// Midpoint between hit and miss at the calibrated length.
    pub fn threshold(&self) -> f64 {
        (self.t_hit + self.t_miss) / 2.0
    }

    /// Estimated per-token prefill cost.
    pub fn per_token(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            (self.t_miss - self.t_hit) / self.len as f64
        }
    }

    /// Midpoint threshold scaled to an input of `n` tokens.
    pub fn threshold_at(&self, n: usize) -> f64 {
        self.t_hit + self.per_token() * n as f64 / 2.0
    }

    /// Expected TTFT when exactly `cached` of `n` tokens are reused.
    pub fn expected(&self, n: usize, cached: usize) -> f64 {
        self.t_hit + self.per_token() * (n - cached.min(n)) as f64
    }
}

/// Send attacker-owned content twice: the first probe misses, the second
/// hits the copy the first one cached.
pub fn calibrate_threshold(
    target: &mut dyn ProbeTarget,
    at_ms: f64,
    user: UserId,
    prefix_len: usize,
    rng: &mut ChaCha8Rng,
) -> Calibration {
    let content = TokenSeq::from_ids((0..prefix_len).map(|_| rng.random_range(b'a'..=b'z') as u32));
    if content.is_empty() {
        return Calibration {
            len: 0,
            t_hit: 0.0,
            t_miss: 0.0,
        };
    }
    let miss = target.probe(at_ms, user, &content).ttft_ms;
    let hit = target.probe(at_ms, user, &content).ttft_ms;
    Calibration {
        len: prefix_len,
        t_hit: hit,
        t_miss: miss,
    }
}

/// Hands out attacker identities.
#[derive(Debug, Clone)]
pub struct IdentityPool {
    next: u64,
    pool: Vec<UserId>,
    cursor: usize,
    strategy: PollutionStrategy,
}

impl IdentityPool {
    pub fn new(strategy: PollutionStrategy, pool_size: usize, base: u64) -> Self {
        Self {
            next: base + pool_size as u64,
            pool: (0..pool_size as u64).map(|i| UserId(base + i)).collect(),
            cursor: 0,
            strategy,
        }
    }

    pub fn take(&mut self) -> UserId {
        match self.strategy {
            PollutionStrategy::FreshIdentities => {
                let u = UserId(self.next);
                self.next += 1;
                u
            }
            PollutionStrategy::CalibrationDifferencing => {
                let u = self.pool[self.cursor % self.pool.len()];
                self.cursor += 1;
                u
            }
        }
    }
}

/// Token-by-token reconstruction, one round (secret position) at a time,
/// so a driver can interleave many attacks in virtual time.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    cfg: AttackConfig,
    calib: Calibration,
    pos: usize,
    recovered: Vec<TokenId>,
    low_confidence: Vec<bool>,
    probes_used: usize,
    /// Everything this attacker has sent, for self-pollution discounting.
    sent: Vec<TokenSeq>,
    seen_hit: bool,
    downgraded: bool,
    stale_probes: usize,
    exhausted: bool,
}

impl Reconstruction {
    pub fn new(cfg: AttackConfig, calib: Calibration) -> Self {
        Self {
            cfg,
            calib,
            pos: 0,
            recovered: Vec::new(),
            low_confidence: Vec::new(),
            probes_used: 0,
            sent: Vec::new(),
            seen_hit: false,
            downgraded: false,
            stale_probes: 0,
            exhausted: false,
        }
    }

    pub fn done(&self) -> bool {
        self.exhausted || self.pos >= self.cfg.candidate_sets.len()
    }

    fn self_cached(&self, probe: &TokenSeq) -> usize {
        self.sent
            .iter()
            .map(|s| common_prefix_len(s.as_slice(), probe.as_slice()))
            .max()
            .unwrap_or(0)
    }

    fn is_hit(&self, n: usize, own: usize, ttft: f64) -> bool {
        match (self.cfg.strategy, self.cfg.hit_threshold) {
            (_, HitThreshold::Fixed { ms }) => ttft < ms,
            (PollutionStrategy::FreshIdentities, HitThreshold::Adaptive) => {
                ttft < self.calib.threshold_at(n)
            }
            (PollutionStrategy::CalibrationDifferencing, HitThreshold::Adaptive) => {
                // A hit must beat what the attacker's own traffic explains.
                ttft < self.calib.expected(n, own) - self.calib.per_token() / 2.0
            }
        }
    }

    /// Run one round at `at_ms`: append known positions, then probe every
    /// candidate of the next unknown position and keep the best.
    pub fn step(
        &mut self,
        target: &mut dyn ProbeTarget,
        ids: &mut IdentityPool,
        at_ms: f64,
        rng: &mut ChaCha8Rng,
    ) {
        while let Some(set) = self.cfg.candidate_sets.get(self.pos) {
            if set.len() == 1 {
                self.recovered.push(set[0]);
                self.low_confidence.push(false);
                self.pos += 1;
            } else {
                break;
            }
        }
        let Some(set) = self.cfg.candidate_sets.get(self.pos).cloned() else {
            return;
        };
        if set.is_empty() || self.probes_used + set.len() > self.cfg.max_probes {
            self.exhausted = true;
            return;
        }
        // Differencing needs its own copy of the known prefix as the
        // reference; like calibration probes it is not charged to the budget.
        if self.cfg.strategy == PollutionStrategy::CalibrationDifferencing && self.sent.is_empty() {
            let prefix = self.cfg.known_prefix.clone();
            if !prefix.is_empty() {
                target.probe(at_ms, ids.take(), &prefix);
                self.sent.push(prefix);
            }
        }
        // One random key per candidate, drawn before probing, so the
        // tie-break consumes the stream identically whatever the outcome.
        let keys: Vec<u64> = set.iter().map(|_| rng.random()).collect();
        let mut base: Vec<TokenId> = self.cfg.known_prefix.as_slice().to_vec();
        base.extend_from_slice(&self.recovered);
        let mut obs = Vec::with_capacity(set.len());
        for &c in &set {
            let mut probe = base.clone();
            probe.push(c);
            let probe = TokenSeq::from(probe);
            let own = match self.cfg.strategy {
                PollutionStrategy::CalibrationDifferencing => self.self_cached(&probe),
                PollutionStrategy::FreshIdentities => 0,
            };
            let user = ids.take();
            let t = target.probe(at_ms, user, &probe).ttft_ms;
            self.probes_used += 1;
            let adjusted = match self.cfg.strategy {
                PollutionStrategy::CalibrationDifferencing => t - self.calib.expected(probe.len(), own),
                PollutionStrategy::FreshIdentities => t,
            };
            let hit = self.is_hit(probe.len(), own, t);
            if self.cfg.strategy == PollutionStrategy::CalibrationDifferencing {
                self.sent.push(probe);
            }
            obs.push((adjusted, hit));
        }
        let any_hit = obs.iter().any(|o| o.1);
        let pick = (0..set.len())
            .filter(|&i| !any_hit || obs[i].1)
            .min_by(|&a, &b| {
                obs[a]
                    .0
                    .total_cmp(&obs[b].0)
                    .then(keys[a].cmp(&keys[b]))
            })
            .expect("non-empty set");
        if any_hit {
            self.seen_hit = true;
        } else if self.seen_hit {
            self.downgraded = true;
        }
        if self.downgraded {
            self.stale_probes += set.len();
        }
        self.recovered.push(set[pick]);
        self.low_confidence.push(!any_hit);
        self.pos += 1;
        // Trailing fixed positions need no further round.
        while let Some(s) = self.cfg.candidate_sets.get(self.pos) {
            if s.len() == 1 {
                self.recovered.push(s[0]);
                self.low_confidence.push(false);
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    pub fn result(&self) -> AttackResult {
        AttackResult {
            recovered: TokenSeq::from(self.recovered.clone()),
            per_position_correct: Vec::new(),
            probes_used: self.probes_used,
            success: false,
            low_confidence: self.low_confidence.clone(),
            downgraded_mid_attack: self.downgraded,
            stale_probes: self.stale_probes,
            budget_exhausted: self.exhausted,
        }
    }
}

fn next_gap(schedule: ProbeSchedule, interval: f64, rng: &mut ChaCha8Rng) -> f64 {
    match schedule {
        ProbeSchedule::Uniform => interval,
        ProbeSchedule::Jittered => interval * rng.random_range(0.5..1.5),
    }
}

/// Reconstruct one secret end to end, starting at `start_ms`.
pub fn reconstruct(
    cfg: AttackConfig,
    target: &mut dyn ProbeTarget,
    start_ms: f64,
    interval_ms: f64,
    seed: u64,
) -> Result<AttackResult, AttackError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = match cfg.strategy {
        PollutionStrategy::FreshIdentities => {
            IdentityPool::new(cfg.strategy, 0, ATTACKER_ID_BASE)
        }
        PollutionStrategy::CalibrationDifferencing => IdentityPool {
            next: 0,
            pool: if cfg.identities.is_empty() {
                vec![UserId(ATTACKER_ID_BASE)]
            } else {
                cfg.identities.clone()
            },
            cursor: 0,
            strategy: cfg.strategy,
        },
    };
    let calib_user = cfg.identities.first().copied().unwrap_or(UserId(ATTACKER_ID_BASE));
    let n = cfg.known_prefix.len() + cfg.candidate_sets.len();
    let calib = calibrate_threshold(target, start_ms, calib_user, n.max(1), &mut rng);
    let total = cfg.candidate_sets.len();
    let schedule = cfg.probe_schedule;
    let mut r = Reconstruction::new(cfg, calib);
    let mut at = start_ms;
    while !r.done() {
        r.step(target, &mut ids, at, &mut rng);
        at += next_gap(schedule, interval_ms, &mut rng);
    }
    let res = r.result();
    if res.budget_exhausted {
        Err(AttackError::BudgetExhausted {
            partial: Box::new(res),
            total,
        })
    } else {
        Ok(res)
    }
}

/// One secret to attack. `truth` is only used for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTarget {
    pub request_id: u64,
    pub victim: UserId,
    pub family: String,
    pub start_ms: f64,
    pub known_prefix: TokenSeq,
    pub candidate_sets: Vec<Vec<TokenId>>,
    pub truth: TokenSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretOutcome {
    pub request_id: u64,
    pub family: String,
    pub positions: usize,
    pub correct: usize,
    /// The attacker's guess, one token per position.
    pub recovered: TokenSeq,
    pub success: bool,
    pub probes_used: usize,
    pub downgraded_mid_attack: bool,
    pub budget_exhausted: bool,
}

/// `attack.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub n_secrets: usize,
    pub fully_recovered: usize,
    pub attack_success_rate: f64,
    pub defense_rate: f64,
    /// Over positions with more than one candidate.
    pub probed_positions: usize,
    pub probed_correct: usize,
    pub per_token_recovery_rate: f64,
    /// Correct count by position index (probed positions only).
    pub per_position_correct: Vec<usize>,
    pub per_position_total: Vec<usize>,
    pub probes_used: usize,
    pub low_confidence_positions: usize,
    pub downgraded_mid_attack: usize,
    pub stale_probes: usize,
    pub budget_exhausted: usize,
    pub calibration: Calibration,
    pub secrets: Vec<SecretOutcome>,
}

/// Attack every target, interleaving rounds by virtual time. One
/// calibration pair runs before the first round.
pub fn run_campaign(
    target: &mut dyn ProbeTarget,
    targets: &[AttackTarget],
    settings: &AttackSettings,
) -> CampaignReport {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut ids = IdentityPool::new(settings.strategy, settings.identities, ATTACKER_ID_BASE);
    let start = targets.iter().map(|t| t.start_ms).fold(f64::INFINITY, f64::min);
    let start = if start.is_finite() { start } else { 0.0 };
    let calib_len = settings.calibration_tokens;
    let calib_user = ids.take();
    let calib = match settings.hit_threshold {
        HitThreshold::Adaptive => calibrate_threshold(target, start, calib_user, calib_len, &mut rng),
        HitThreshold::Fixed { ms } => Calibration {
            len: 0,
            t_hit: ms,
            t_miss: ms,
        },
    };
    let mut sessions: Vec<Reconstruction> = targets
        .iter()
        .map(|t| {
            Reconstruction::new(
                AttackConfig {
                    known_prefix: t.known_prefix.clone(),
                    candidate_sets: t.candidate_sets.clone(),
                    hit_threshold: settings.hit_threshold,
                    identities: Vec::new(),
                    strategy: settings.strategy,
                    probe_schedule: settings.probe_schedule,
                    max_probes: settings.max_probes,
                },
                calib,
            )
        })
        .collect();
    // (time, target index) min-heap; index breaks ties deterministically.
    let mut queue: BinaryHeap<Reverse<(OrdF64, usize)>> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| Reverse((OrdF64(t.start_ms), i)))
        .collect();
    while let Some(Reverse((OrdF64(at), i))) = queue.pop() {
        let s = &mut sessions[i];
        s.step(target, &mut ids, at, &mut rng);
        if !s.done() {
            let gap = next_gap(settings.probe_schedule, settings.probe_interval_ms, &mut rng);
            queue.push(Reverse((OrdF64(at + gap), i)));
        }
    }
    summarize(targets, &sessions, calib)
}

fn summarize(targets: &[AttackTarget], sessions: &[Reconstruction], calib: Calibration) -> CampaignReport {
    let mut rep = CampaignReport {
        n_secrets: targets.len(),
        fully_recovered: 0,
        attack_success_rate: 0.0,
        defense_rate: 1.0,
        probed_positions: 0,
        probed_correct: 0,
        per_token_recovery_rate: 0.0,
        per_position_correct: Vec::new(),
        per_position_total: Vec::new(),
        probes_used: 0,
        low_confidence_positions: 0,
        downgraded_mid_attack: 0,
        stale_probes: 0,
        budget_exhausted: 0,
        calibration: calib,
        secrets: Vec::new(),
    };
    for (t, s) in targets.iter().zip(sessions) {
        let mut res = s.result();
        res.score(&t.truth);
        for (i, (&ok, set)) in res.per_position_correct.iter().zip(&t.candidate_sets).enumerate() {
            if set.len() <= 1 {
                continue;
            }
            if rep.per_position_total.len() <= i {
                rep.per_position_total.resize(i + 1, 0);
                rep.per_position_correct.resize(i + 1, 0);
            }
            rep.per_position_total[i] += 1;
            rep.probed_positions += 1;
            if ok {
                rep.per_position_correct[i] += 1;
                rep.probed_correct += 1;
            }
        }
        rep.fully_recovered += res.success as usize;
        rep.probes_used += res.probes_used;
        rep.low_confidence_positions += res.low_confidence.iter().filter(|&&l| l).count();
        rep.downgraded_mid_attack += res.downgraded_mid_attack as usize;
        rep.stale_probes += res.stale_probes;
        rep.budget_exhausted += res.budget_exhausted as usize;
        rep.secrets.push(SecretOutcome {
            request_id: t.request_id,
            family: t.family.clone(),
            positions: t.truth.len(),
            correct: res.per_position_correct.iter().filter(|&&c| c).count(),
            recovered: res.recovered.clone(),
            success: res.success,
            probes_used: res.probes_used,
            downgraded_mid_attack: res.downgraded_mid_attack,
            budget_exhausted: res.budget_exhausted,
        });
    }
    if rep.n_secrets > 0 {
        rep.attack_success_rate = rep.fully_recovered as f64 / rep.n_secrets as f64;
        rep.defense_rate = 1.0 - rep.attack_success_rate;
    }
    if rep.probed_positions > 0 {
        rep.per_token_recovery_rate = rep.probed_correct as f64 / rep.probed_positions as f64;
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

#[cfg(test)]
mod tests;
