//! Deterministic synthetic workloads: multi-user traffic with controlled
//! intra-/inter-user prefix reuse, planted secrets with ground truth, and
//! three scenario shapes.

mod corpus;
mod secrets;
mod words;

use std::collections::HashMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

pub use corpus::{load_corpus, CorpusRow};
pub use secrets::{render, tier1_corpus, SecretFamily, SecretText, SymbolClass};

use crate::cache_index::{CacheIndex, CapacityConfig, IndexConfig};
use crate::detection::BlockTruth;
use crate::error::WorkloadError;
use crate::types::{tokenize, OwnerClass, SensitivityLabel, TokenId, TokenSeq, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "single_request_pii")]
    SingleRequestPII,
    #[serde(rename = "multi_turn_chat")]
    MultiTurnChat,
    #[serde(rename = "system_prompt")]
    SystemPrompt,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::SingleRequestPII,
        Scenario::MultiTurnChat,
        Scenario::SystemPrompt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SingleRequestPII => "single_request_pii",
            Scenario::MultiTurnChat => "multi_turn_chat",
            Scenario::SystemPrompt => "system_prompt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub n_users: usize,
    pub n_requests: usize,
    pub scenario: Scenario,
    /// Target share of input tokens reusable from other users' requests.
    pub inter_user_overlap: f64,
    /// Target share of input tokens reusable from the same user's requests.
    pub intra_user_overlap: f64,
    /// Fraction of requests carrying a secret.
    pub secret_density: f64,
    /// Fraction of secrets that are sensitive only with session history
    /// (multi-turn scenario only).
    pub context_dependent_fraction: f64,
    pub system_prompt_tokens: usize,
    pub seed: u64,
    pub mean_interarrival_ms: f64,
    /// Bounds on new (never seen) tokens per request.
    pub fresh_tokens_min: usize,
    pub fresh_tokens_max: usize,
    pub turns_per_session: usize,
    pub think_time_ms: f64,
    /// Share of users whose blocks are business-owned.
    pub business_fraction: f64,
    /// Allowed gap between measured and target reuse.
    pub tolerance: f64,
    /// Secret families to plant; empty means every standalone family.
    pub families: Vec<SecretFamily>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self::preset(Scenario::MultiTurnChat)
    }
}

impl WorkloadSpec {
    /// Shipped scenario presets. Multi-turn chat mirrors the ShareGPT reuse
    /// split (7.06% intra, 25.49% inter); single-request PII mirrors the
    /// prompt-multitask split (0% intra, 63.10% inter); the system-prompt
    /// preset shares an 8192-token prefix across all requests.
    pub fn preset(scenario: Scenario) -> Self {
        let base = WorkloadSpec {
            n_users: 40,
            n_requests: 400,
            scenario,
            inter_user_overlap: 0.2549,
            intra_user_overlap: 0.0706,
            secret_density: 0.2,
            context_dependent_fraction: 0.0,
            system_prompt_tokens: 0,
            seed: 7,
            mean_interarrival_ms: 50.0,
            fresh_tokens_min: 160,
            fresh_tokens_max: 320,
            turns_per_session: 4,
            think_time_ms: 1500.0,
            business_fraction: 0.0,
            tolerance: 0.02,
            families: Vec::new(),
        };
        match scenario {
            Scenario::MultiTurnChat => WorkloadSpec {
                context_dependent_fraction: 0.2,
                ..base
            },
            Scenario::SingleRequestPII => WorkloadSpec {
                inter_user_overlap: 0.631,
                intra_user_overlap: 0.0,
                secret_density: 0.3,
                ..base
            },
            Scenario::SystemPrompt => WorkloadSpec {
                n_requests: 200,
                n_users: 20,
                system_prompt_tokens: 8192,
                inter_user_overlap: 0.92,
                intra_user_overlap: 0.045,
                secret_density: 0.2,
                business_fraction: 0.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::InfeasibleSpec(m));
        if self.n_users == 0 || self.n_requests == 0 {
            return bad("n_users and n_requests must be positive".into());
        }
        for (name, v) in [
            ("inter_user_overlap", self.inter_user_overlap),
            ("intra_user_overlap", self.intra_user_overlap),
            ("secret_density", self.secret_density),
            ("context_dependent_fraction", self.context_dependent_fraction),
            ("business_fraction", self.business_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.inter_user_overlap + self.intra_user_overlap >= 0.99 {
            return bad("overlap targets leave no room for new tokens".into());
        }
        if self.inter_user_overlap > 0.0 && self.n_users < 2 {
            return bad("inter-user overlap needs at least two users".into());
        }
        if self.fresh_tokens_min == 0 || self.fresh_tokens_min > self.fresh_tokens_max {
            return bad("need 0 < fresh_tokens_min <= fresh_tokens_max".into());
        }
        if !(self.mean_interarrival_ms > 0.0) {
            return bad("mean_interarrival_ms must be positive".into());
        }
        if self.scenario == Scenario::SystemPrompt && self.system_prompt_tokens == 0 {
            return bad("system_prompt scenario needs system_prompt_tokens > 0".into());
        }
        if self.scenario != Scenario::MultiTurnChat && self.context_dependent_fraction > 0.0 {
            return bad("context-dependent secrets need the multi-turn scenario".into());
        }
        if self.scenario == Scenario::MultiTurnChat && self.turns_per_session == 0 {
            return bad("turns_per_session must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sensitivity {
    Always,
    ContextOnly,
}

/// One ground-truth sensitive span in a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthSpan {
    /// Token range within the request.
    pub span: Range<usize>,
    pub sensitivity: Sensitivity,
    pub category: String,
    /// A shipped Tier-1 rule matches this secret's text form; when false
    /// the secret is Tier-2-only.
    pub tier1_covered: bool,
    /// For context-only secrets: the cue that must appear in the history.
    pub context_cue: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub user: UserId,
    pub owner: OwnerClass,
    pub session: u64,
    pub turn: u32,
    pub arrival_ms: f64,
    pub text: String,
    pub tokens: TokenSeq,
    pub secrets: Vec<TruthSpan>,
    /// Earlier requests of the same session, oldest first.
    pub history: Vec<u64>,
}

impl Request {
    /// Ground truth for tokens `range` of this request.
    pub fn block_truth(&self, range: Range<usize>) -> BlockTruth {
        let mut t = BlockTruth::default();
        for s in &self.secrets {
            if s.span.start < range.end && range.start < s.span.end {
                match s.sensitivity {
                    Sensitivity::Always => t.sensitive = true,
                    Sensitivity::ContextOnly => t.context_cue = s.context_cue.clone(),
                }
                if !t.categories.contains(&s.category) {
                    t.categories.push(s.category.clone());
                }
            }
        }
        if t.sensitive {
            t.context_cue = None;
        }
        t
    }
}

/// A planted secret as handed to the adversary: the text leading up to it
/// and the candidate set of each position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSecret {
    pub request_id: u64,
    pub user: UserId,
    pub family: SecretFamily,
    pub sensitivity: Sensitivity,
    pub known_prefix: TokenSeq,
    pub secret: TokenSeq,
    pub candidate_sets: Vec<Vec<TokenId>>,
}

/// Token-weighted reuse split under an unbounded global-share index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReuseStats {
    pub total_tokens: u64,
    pub intra_tokens: u64,
    pub inter_tokens: u64,
    /// Tokens reusable when every user only sees their own cache.
    pub partition_tokens: u64,
    pub intra_reuse: f64,
    pub inter_reuse: f64,
}

impl ReuseStats {
    fn finish(mut self) -> Self {
        let t = self.total_tokens.max(1) as f64;
        self.intra_reuse = self.intra_tokens as f64 / t;
        self.inter_reuse = self.inter_tokens as f64 / t;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub spec: WorkloadSpec,
    pub requests: Vec<Request>,
    pub secrets: Vec<PlantedSecret>,
    pub reuse: ReuseStats,
}

/// Per-request view of every planted span.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub entries: Vec<(u64, Vec<TruthSpan>)>,
}

impl Workload {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            entries: self
                .requests
                .iter()
                .filter(|r| !r.secrets.is_empty())
                .map(|r| (r.id, r.secrets.clone()))
                .collect(),
        }
    }

    pub fn request(&self, id: u64) -> Option<&Request> {
        self.requests.get(id as usize).filter(|r| r.id == id)
    }

    pub fn history_texts(&self, req: &Request) -> Vec<String> {
        req.history
            .iter()
            .filter_map(|&h| self.request(h))
            .map(|r| r.text.clone())
            .collect()
    }

    pub fn users(&self) -> Vec<UserId> {
        let mut u: Vec<UserId> = self.requests.iter().map(|r| r.user).collect();
        u.sort();
        u.dedup();
        u
    }
}

/// Attribution of matched tokens along a path: runs of (creator, tokens).
type Runs = Vec<(UserId, usize)>;

/// Global-share measurement index plus a partition index.
struct Meter {
    shared: CacheIndex,
    partition: CacheIndex,
    stats: ReuseStats,
}

impl Meter {
    fn new() -> Self {
        let cfg = IndexConfig {
            capacity: CapacityConfig::tokens(u64::MAX / 4, 0, 0),
            tiered: false,
        };
        Self {
            shared: CacheIndex::new(cfg).expect("unbounded index"),
            partition: CacheIndex::new(cfg).expect("unbounded index"),
            stats: ReuseStats::default(),
        }
    }

    fn path_runs(&self, seq: &TokenSeq, user: UserId) -> Runs {
        let m = self.shared.match_prefix(seq, user);
        let mut runs: Runs = Vec::new();
        let mut depth = 0usize;
        for id in m.path {
            let n = self.shared.node(id).expect("path node");
            let take = (n.depth().min(m.matched_tokens)) - depth;
            depth += take;
            match runs.last_mut() {
                Some((c, len)) if *c == n.creator() => *len += take,
                _ => runs.push((n.creator(), take)),
            }
        }
        runs
    }

    /// Prefix of `seq` that `user` could reuse from its own earlier requests.
    fn own_lcp(&self, seq: &TokenSeq, user: UserId) -> usize {
        self.partition.match_prefix(seq, user).matched_tokens
    }

    /// Account for and insert one request; returns its creator runs.
    fn observe(&mut self, seq: &TokenSeq, user: UserId) -> Runs {
        for (creator, len) in self.path_runs(seq, user) {
            if creator == user {
                self.stats.intra_tokens += len as u64;
            } else {
                self.stats.inter_tokens += len as u64;
            }
        }
        self.stats.total_tokens += seq.len() as u64;
        let p = self.partition.match_prefix(seq, user).matched_tokens;
        self.stats.partition_tokens += p as u64;
        let out = self
            .shared
            .insert(seq, user, OwnerClass::Customer, 0)
            .expect("unbounded insert");
        for n in out.new_nodes {
            self.shared
                .set_label(n, SensitivityLabel::Public, false)
                .expect("fresh node");
        }
        self.partition
            .insert(seq, user, OwnerClass::Customer, 0)
            .expect("unbounded insert");
        self.path_runs(seq, user)
    }
}

/// Reuse split of an arbitrary request stream (token-weighted, attribution
/// by creator of the matched node).
pub fn measure_reuse<'a, I>(requests: I) -> ReuseStats
where
    I: IntoIterator<Item = (UserId, &'a TokenSeq)>,
{
    let mut m = Meter::new();
    for (u, s) in requests {
        if !s.is_empty() {
            m.observe(s, u);
        }
    }
    m.stats.finish()
}

struct Slot {
    user: UserId,
    session: u64,
    turn: u32,
    arrival: f64,
}

struct Planned {
    secret: Option<SecretText>,
    setup: Option<String>,
}

/// Generated request kept for source selection.
struct Source {
    text: String,
    /// Bytes others may copy (everything before the secret).
    shareable: usize,
    runs: Runs,
}

fn schedule(spec: &WorkloadSpec, rng: &mut ChaCha8Rng) -> Vec<Slot> {
    let user = |rng: &mut ChaCha8Rng| UserId(1 + rng.random_range(0..spec.n_users as u64));
    let mut slots = Vec::with_capacity(spec.n_requests);
    match spec.scenario {
        Scenario::MultiTurnChat => {
            let turns = spec.turns_per_session;
            let gap = Exp::new(1.0 / (spec.mean_interarrival_ms * turns as f64)).expect("rate");
            let mut start = 0.0;
            let mut session = 0u64;
            while slots.len() < spec.n_requests {
                let u = user(rng);
                let mut t = start;
                for turn in 0..turns {
                    if slots.len() == spec.n_requests {
                        break;
                    }
                    if turn > 0 {
                        t += spec.think_time_ms * rng.random_range(0.5..1.5);
                    }
                    slots.push(Slot {
                        user: u,
                        session,
                        turn: turn as u32,
                        arrival: t,
                    });
                }
                session += 1;
                start += gap.sample(rng);
            }
        }
        _ => {
            let gap = Exp::new(1.0 / spec.mean_interarrival_ms).expect("rate");
            let mut t = 0.0;
            for i in 0..spec.n_requests {
                if i > 0 {
                    t += gap.sample(rng);
                }
                slots.push(Slot {
                    user: user(rng),
                    session: i as u64,
                    turn: 0,
                    arrival: t,
                });
            }
        }
    }
    // Stable sort keeps generation order on equal arrival times.
    slots.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
    slots
}

fn plan_secrets(spec: &WorkloadSpec, slots: &[Slot], rng: &mut ChaCha8Rng) -> Vec<Planned> {
    let families: Vec<SecretFamily> = if spec.families.is_empty() {
        SecretFamily::ALWAYS.to_vec()
    } else {
        spec.families.clone()
    };
    let mut plans: Vec<Planned> = slots
        .iter()
        .map(|_| Planned {
            secret: None,
            setup: None,
        })
        .collect();
    let mut last_turn: HashMap<u64, usize> = HashMap::new();
    for (i, slot) in slots.iter().enumerate() {
        let prev = last_turn.insert(slot.session, i);
        if !rng.random_bool(spec.secret_density) {
            continue;
        }
        let context = prev.is_some() && rng.random_bool(spec.context_dependent_fraction);
        if context {
            let s = render(SecretFamily::ContextAccount, rng);
            let (setup, _) = s.setup.clone().expect("context secret has setup");
            let p = prev.expect("checked");
            if plans[p].setup.is_none() {
                plans[p].setup = Some(setup);
                plans[i].secret = Some(s);
                continue;
            }
        }
        let f = families[rng.random_range(0..families.len())];
        plans[i].secret = Some(render(f, rng));
    }
    plans
}

/// Contribution (intra, inter) of the first `k` tokens of `runs` for `user`.
fn contribution(runs: &Runs, k: usize, user: UserId) -> (f64, f64) {
    let (mut intra, mut inter, mut left) = (0.0, 0.0, k);
    for &(c, len) in runs {
        let t = len.min(left);
        if c == user {
            intra += t as f64;
        } else {
            inter += t as f64;
        }
        left -= t;
        if left == 0 {
            break;
        }
    }
    (intra, inter)
}

/// Generate a workload. Measured reuse must land within `spec.tolerance` of
/// its targets.
pub fn generate(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let slots = schedule(spec, &mut rng);
    let plans = plan_secrets(spec, &slots, &mut rng);
    let business_cut = (spec.business_fraction * spec.n_users as f64).round() as u64;

    let mut system_prompt = String::new();
    if spec.scenario == Scenario::SystemPrompt {
        system_prompt.push_str("system: ");
        let n = spec.system_prompt_tokens.saturating_sub(system_prompt.len());
        words::fill(&mut system_prompt, n, &mut rng);
        system_prompt.truncate(spec.system_prompt_tokens);
    }
    let base_len = system_prompt.len();

    let (a, b) = (spec.intra_user_overlap, spec.inter_user_overlap);
    let mut meter = Meter::new();
    let mut sources: Vec<Source> = Vec::new();
    let mut requests: Vec<Request> = Vec::with_capacity(slots.len());
    let mut secrets = Vec::new();
    let mut sessions: HashMap<u64, Vec<u64>> = HashMap::new();
    const WINDOW: usize = 512;

    for (i, (slot, plan)) in slots.iter().zip(&plans).enumerate() {
        let u = slot.user;
        let fresh = rng.random_range(spec.fresh_tokens_min..=spec.fresh_tokens_max);
        let tail_len = plan.setup.as_ref().map_or(0, |s| s.len() + 1)
            + plan.secret.as_ref().map_or(0, |s| s.sentence().len() + 3);
        let (i_tot, x_tot, t_tot) = (
            meter.stats.intra_tokens as f64,
            meter.stats.inter_tokens as f64,
            meter.stats.total_tokens as f64,
        );
        let err = |ci: f64, cx: f64, len: f64| {
            let t = t_tot + len;
            let ei = i_tot + ci - a * t;
            let ex = x_tot + cx - b * t;
            ei * ei + ex * ex
        };
        let fixed = (fresh + tail_len) as f64;

        // Baseline: just the shared base prefix (if any) plus new text.
        let base_contrib = sources
            .first()
            .map(|s| contribution(&s.runs, base_len, u))
            .unwrap_or((0.0, 0.0));
        let mut best: (f64, Option<usize>, usize) = (
            err(base_contrib.0, base_contrib.1, base_len as f64 + fixed),
            None,
            base_len,
        );
        // Tokens this user could already reuse from its own partition but
        // which the shared index attributes to someone else. Copies may not
        // add to that, so partition-only reuse tracks the intra target.
        let own_base = if base_len > 0 {
            meter.own_lcp(&tokenize(&system_prompt), u).min(base_len)
        } else {
            0
        };
        let excess0 = own_base as f64 - base_contrib.0;
        let lo = sources.len().saturating_sub(WINDOW);
        for si in lo..sources.len() {
            let s = &sources[si];
            let max_k = s.shareable;
            if max_k <= base_len {
                continue;
            }
            let own = meter.own_lcp(&tokenize(&s.text[..max_k]), u);
            // Evaluate at run boundaries and at each run's unconstrained optimum.
            let mut ks = vec![max_k];
            let mut acc = 0usize;
            for &(c, len) in &s.runs {
                let start = acc;
                acc += len;
                if start >= max_k {
                    break;
                }
                let end = acc.min(max_k);
                if end > base_len {
                    ks.push(end);
                }
                let (ci0, cx0) = contribution(&s.runs, start, u);
                // d/dk of the error along a run where one counter grows 1:1.
                let (di, dx) = if c == u { (1.0, 0.0) } else { (0.0, 1.0) };
                let t0 = t_tot + start as f64 + fixed;
                let ei0 = i_tot + ci0 - a * t0;
                let ex0 = x_tot + cx0 - b * t0;
                let gi = di - a;
                let gx = dx - b;
                let denom = gi * gi + gx * gx;
                if denom > 0.0 {
                    let step = -(ei0 * gi + ex0 * gx) / denom;
                    if step > 0.0 {
                        let k = start + step.round() as usize;
                        if k > base_len && k < end {
                            ks.push(k);
                        }
                    }
                }
            }
            for k in ks {
                if k <= base_len || k > max_k {
                    continue;
                }
                let (ci, cx) = contribution(&s.runs, k, u);
                if k.min(own) as f64 - ci > excess0 + 0.5 {
                    continue;
                }
                let e = err(ci, cx, k as f64 + fixed);
                if e < best.0 - 1e-9 {
                    best = (e, Some(si), k);
                }
            }
        }

        let mut text = String::new();
        match best.1 {
            Some(si) => text.push_str(&sources[si].text[..best.2]),
            None => text.push_str(&system_prompt),
        }
        // Diverge from the source right after the copied prefix.
        let next = best.1.and_then(|si| sources[si].text.as_bytes().get(best.2).copied());
        let sep = if next == Some(b'\n') { ' ' } else { '\n' };
        if !text.is_empty() {
            text.push(sep);
        }
        words::fill(&mut text, fresh, &mut rng);
        if let Some(setup) = &plan.setup {
            text.push(' ');
            text.push_str(setup);
        }
        let mut spans = Vec::new();
        let shareable;
        if let Some(s) = &plan.secret {
            text.push_str(". ");
            shareable = text.len();
            text.push_str(&s.lead);
            let start = text.len();
            text.push_str(&s.value);
            let end = text.len();
            text.push('.');
            let (sensitivity, cue) = match &s.setup {
                Some((_, cue)) => (Sensitivity::ContextOnly, Some(cue.clone())),
                None => (Sensitivity::Always, None),
            };
            spans.push(TruthSpan {
                span: start..end,
                sensitivity,
                category: s.family.category().to_string(),
                tier1_covered: s.family.tier1_covered(),
                context_cue: cue,
            });
            let tokens = tokenize(&text);
            secrets.push(PlantedSecret {
                request_id: i as u64,
                user: u,
                family: s.family,
                sensitivity,
                known_prefix: tokens.prefix(start),
                secret: TokenSeq::from(&tokens.as_slice()[start..end]),
                candidate_sets: s
                    .candidate_sets(10, &mut rng)
                    .into_iter()
                    .map(|set| set.into_iter().map(|c| TokenId(c as u32)).collect())
                    .collect(),
            });
        } else {
            shareable = text.len();
        }

        let tokens = tokenize(&text);
        let runs = meter.observe(&tokens, u);
        let history = sessions.entry(slot.session).or_default();
        let req = Request {
            id: i as u64,
            user: u,
            owner: if u.0 <= business_cut {
                OwnerClass::Business
            } else {
                OwnerClass::Customer
            },
            session: slot.session,
            turn: slot.turn,
            arrival_ms: slot.arrival,
            text: text.clone(),
            tokens,
            secrets: spans,
            history: history.clone(),
        };
        history.push(i as u64);
        requests.push(req);
        sources.push(Source {
            text,
            shareable,
            runs,
        });
    }

    let reuse = meter.stats.finish();
    let off_intra = (reuse.intra_reuse - a).abs();
    let off_inter = (reuse.inter_reuse - b).abs();
    if off_intra > spec.tolerance || off_inter > spec.tolerance {
        return Err(WorkloadError::InfeasibleSpec(format!(
            "measured reuse intra {:.4} / inter {:.4} misses targets {a:.4} / {b:.4} by more than {}",
            reuse.intra_reuse, reuse.inter_reuse, spec.tolerance
        )));
    }
    Ok(Workload {
        spec: spec.clone(),
        requests,
        secrets,
        reuse,
    })
}
