//! Discrete-event serving simulator: admission, prefix lookup, TTFT cost
//! model, policy labeling, asynchronous detection and the entropy monitor,
//! all over virtual time.

mod artifacts;
pub mod config;
mod metrics;
mod run;
mod schedule;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use artifacts::{artifact_hash, read_metrics, write_artifacts, ARTIFACT_FILES};
pub use config::{CapacitySettings, CostModel, ScenarioConfig, SchedulingMode, SimConfig};
pub use metrics::{
    percentile, RequestRecord, RunMetrics, SimEvent, TtftSummary, UserKind, FORMAT_VERSION,
};
pub use run::{
    attack_targets, run_policy, run_policy_with_rules, run_scenario, run_scenario_with_rules, PolicyRun,
    RunArtifact,
};
pub use schedule::{batch_step, Pending};

use crate::adversary::{Observation, ProbeTarget};
use crate::cache_index::{CacheIndex, NodeId};
use crate::detection::{BlockInput, Completed, DetectionPipeline, Job, RuleEngine};
use crate::error::{CacheError, SimError};
use crate::monitor::{AnomalyAction, Monitor};
use crate::types::{detokenize, OwnerClass, PolicyId, SensitivityLabel, TokenSeq, UserId};
use crate::workload::Request;

/// Request ids at or above this value are attacker probes.
pub const PROBE_ID_BASE: u64 = 1 << 32;

/// Bytes of preceding text handed to Tier-1 with each block, enough for
/// any shipped pattern to straddle a block boundary.
const PREFIX_CONTEXT: usize = 256;

#[derive(Debug)]
enum Deferred {
    Unpin(NodeId),
    Complete(Box<Completed>),
}

#[derive(Debug)]
struct Timed {
    at: f64,
    seq: u64,
    what: Deferred,
}

impl PartialEq for Timed {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Timed {}
impl PartialOrd for Timed {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Timed {
    fn cmp(&self, o: &Self) -> Ordering {
        self.at.total_cmp(&o.at).then(self.seq.cmp(&o.seq))
    }
}

/// Outstanding classification: the request that created the block plus
/// split-off halves that must receive the same label.
#[derive(Debug, Default)]
struct Outstanding {
    request_id: u64,
    aliases: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Next {
    Deferred,
    Epoch,
    Drain,
    Arrival,
}

/// One simulated serving system under a single policy.
pub struct Simulator {
    cfg: SimConfig,
    index: CacheIndex,
    pipeline: Option<DetectionPipeline>,
    monitor: Monitor,
    now: f64,
    seq: u64,
    deferred: BinaryHeap<Reverse<Timed>>,
    arrivals: VecDeque<Request>,
    next_epoch_at: f64,
    next_drain_at: f64,
    /// Job node -> bookkeeping; alias node -> job node.
    outstanding: HashMap<NodeId, Outstanding>,
    alias_of: HashMap<NodeId, NodeId>,
    texts: HashMap<u64, String>,
    records: Vec<RequestRecord>,
    events: Vec<SimEvent>,
    noise: Option<(ChaCha8Rng, Normal<f64>)>,
    next_probe_id: u64,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator")
            .field("policy", &self.cfg.policy)
            .field("now", &self.now)
            .field("records", &self.records.len())
            .finish_non_exhaustive()
    }
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        Self::with_rules(cfg, Arc::new(RuleEngine::default()))
    }

    /// Build with an explicit (possibly hot-reloadable) rule engine.
    pub fn with_rules(cfg: SimConfig, rules: Arc<RuleEngine>) -> Result<Self, SimError> {
        cfg.validate()?;
        let index = CacheIndex::new(cfg.capacities.index_config())?;
        let pipeline = if cfg.policy == PolicyId::SafeKV {
            Some(DetectionPipeline::new(&cfg.detection, rules)?)
        } else {
            None
        };
        let noise = (cfg.cost.noise_sigma > 0.0).then(|| {
            (
                ChaCha8Rng::seed_from_u64(cfg.cost.seed ^ 0x006e_6f69_7365),
                Normal::new(0.0, cfg.cost.noise_sigma).expect("sigma checked"),
            )
        });
        let mut monitor = Monitor::new(cfg.monitor);
        monitor.config.enabled &= cfg.policy == PolicyId::SafeKV;
        Ok(Self {
            next_epoch_at: cfg.monitor.epoch_interval_ms,
            next_drain_at: 0.0,
            cfg,
            index,
            pipeline,
            monitor,
            now: 0.0,
            seq: 0,
            deferred: BinaryHeap::new(),
            arrivals: VecDeque::new(),
            outstanding: HashMap::new(),
            alias_of: HashMap::new(),
            texts: HashMap::new(),
            records: Vec::new(),
            events: Vec::new(),
            noise,
            next_probe_id: PROBE_ID_BASE,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn policy(&self) -> PolicyId {
        self.cfg.policy
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Read access for tests and reports. Adversary code only ever sees
    /// [`ProbeTarget`].
    pub fn index(&self) -> &CacheIndex {
        &self.index
    }

    pub fn records(&self) -> &[RequestRecord] {
        &self.records
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn detection_stats(&self) -> Option<crate::detection::DetectionStats> {
        self.pipeline.as_ref().map(|p| p.stats())
    }

    /// Queue benign requests. Arrival order is kept; equal arrival times
    /// keep insertion order.
    pub fn load(&mut self, requests: &[Request]) {
        for r in requests {
            self.push_request(r.clone());
        }
    }

    pub fn push_request(&mut self, req: Request) {
        let at = self
            .arrivals
            .partition_point(|q| q.arrival_ms <= req.arrival_ms);
        self.arrivals.insert(at, req);
    }

    fn schedule(&mut self, at: f64, what: Deferred) {
        self.seq += 1;
        self.deferred.push(Reverse(Timed {
            at,
            seq: self.seq,
            what,
        }));
    }

    fn pending_jobs(&self) -> usize {
        self.pipeline.as_ref().map_or(0, |p| p.pending())
    }

    fn next_event(&self, limit: f64) -> Option<(f64, Next)> {
        let mut best: Option<(f64, Next)> = None;
        let mut offer = |t: f64, k: Next| {
            if t <= limit && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, k));
            }
        };
        if let Some(Reverse(d)) = self.deferred.peek() {
            offer(d.at, Next::Deferred);
        }
        offer(self.next_epoch_at, Next::Epoch);
        if self.pending_jobs() > 0 {
            offer(self.next_drain_at, Next::Drain);
        }
        if let Some(r) = self.arrivals.front() {
            offer(r.arrival_ms, Next::Arrival);
        }
        best
    }

    /// Process every event with time <= `t`, then move the clock to `t`.
    pub fn advance_to(&mut self, t: f64) {
        while let Some((at, kind)) = self.next_event(t) {
            self.now = self.now.max(at);
            match kind {
                Next::Deferred => {
                    let Reverse(d) = self.deferred.pop().expect("peeked");
                    match d.what {
                        Deferred::Unpin(id) => {
                            // The pinned node cannot have been evicted.
                            let _ = self.index.unpin(id);
                        }
                        Deferred::Complete(c) => self.complete(*c),
                    }
                }
                Next::Epoch => {
                    self.epoch_tick();
                    self.next_epoch_at += self.cfg.monitor.epoch_interval_ms;
                }
                Next::Drain => {
                    self.drain();
                    self.next_drain_at += self.cfg.detection.drain_interval_ms;
                }
                Next::Arrival => self.admit(at),
            }
        }
        self.now = self.now.max(t);
    }

    /// Run until no arrivals, detections or unpins remain.
    pub fn finish(&mut self) {
        loop {
            let next = [
                self.deferred.peek().map(|Reverse(d)| d.at),
                (self.pending_jobs() > 0).then_some(self.next_drain_at),
                self.arrivals.front().map(|r| r.arrival_ms),
            ]
            .into_iter()
            .flatten()
            .min_by(f64::total_cmp);
            match next {
                Some(t) => self.advance_to(t.max(self.now)),
                None => break,
            }
        }
    }

    fn admit(&mut self, at: f64) {
        let mut batch = Vec::new();
        while self.arrivals.front().is_some_and(|r| r.arrival_ms <= at) {
            batch.push(self.arrivals.pop_front().expect("checked"));
        }
        let pending: Vec<Pending> = batch
            .iter()
            .enumerate()
            .map(|(i, r)| Pending {
                request_id: i as u64,
                arrival_ms: r.arrival_ms,
                matched_tokens: match self.cfg.scheduling {
                    SchedulingMode::Fcfs => 0,
                    SchedulingMode::Lpm => self.peek_match(&r.tokens, r.user),
                },
            })
            .collect();
        // Ids here are batch positions, which follow arrival then load order.
        for p in batch_step(pending, self.cfg.scheduling) {
            let req = batch[p.request_id as usize].clone();
            self.serve(&req, UserKind::Benign);
        }
    }

    fn peek_match(&self, seq: &TokenSeq, user: UserId) -> usize {
        self.index.match_prefix(seq, user).matched_tokens
    }

    /// Serve one request at the current time: lookup, TTFT, insert, label.
    pub fn serve(&mut self, req: &Request, kind: UserKind) -> RequestRecord {
        let n = req.tokens.len();
        let cost = self.cfg.cost;
        let m = self.index.match_prefix(&req.tokens, req.user);
        let (intra, inter) = self.attribute(&m.path, m.matched_tokens, req.user);
        let penalty: f64 = m
            .handles
            .iter()
            .map(|h| h.token_count as f64 * cost.penalty(h.tier))
            .sum();
        let jitter = match &mut self.noise {
            Some((rng, d)) => d.sample(rng),
            None => 0.0,
        };
        let ttft = (cost.t_base + cost.c_prefill * (n - m.matched_tokens) as f64 + penalty + jitter)
            .max(cost.t_base);
        if self.monitor.config.enabled {
            for &id in &m.path {
                self.index.record_access(id, req.user);
            }
        }
        let held = (m.terminal_node != self.index.root()).then_some(m.terminal_node);
        if let Some(id) = held {
            self.index.pin(id).expect("matched node exists");
        }
        let epoch = self.index.epoch();
        let res = self.index.insert_blocks(
            &req.tokens,
            req.user,
            req.owner,
            epoch,
            self.cfg.block_tokens,
        );
        if let Some(id) = held {
            let _ = self.index.unpin(id);
        }
        let mut record = RequestRecord {
            request_id: req.id,
            user: req.user.0,
            user_kind: kind,
            policy: self.cfg.policy,
            arrival_ms: self.now,
            input_tokens: n,
            input_digest: format!("{:016x}", req.tokens.digest()),
            matched_tokens: m.matched_tokens,
            intra_matched: intra,
            inter_matched: inter,
            inserted_tokens: 0,
            ttft_ms: ttft,
            epoch,
            dropped: false,
        };
        match res {
            Err(e) => {
                record.dropped = true;
                self.events.push(SimEvent::Dropped {
                    t_ms: self.now,
                    request_id: req.id,
                    reason: e.to_string(),
                });
            }
            Ok(out) => {
                debug_assert_eq!(out.matched_tokens, m.matched_tokens);
                record.inserted_tokens = out.new_tokens;
                if !out.evicted.is_empty() {
                    self.events.push(SimEvent::Eviction {
                        t_ms: self.now,
                        request_id: req.id,
                        handles: out.evicted.len(),
                        tokens: out.evicted.iter().map(|h| h.token_count as u64).sum(),
                    });
                }
                for s in &out.splits {
                    self.track_split(s.upper, s.lower);
                }
                if out.terminal != self.index.root() {
                    self.index.pin(out.terminal).expect("fresh terminal");
                    self.schedule(self.now + ttft, Deferred::Unpin(out.terminal));
                }
                self.label_new(req, &out.new_nodes);
            }
        }
        if kind == UserKind::Benign {
            self.texts.insert(req.id, req.text.clone());
        }
        self.records.push(record.clone());
        record
    }

    /// Split matched tokens by whether the node's creator is `user`.
    fn attribute(&self, path: &[NodeId], matched: usize, user: UserId) -> (usize, usize) {
        let (mut intra, mut inter, mut depth) = (0, 0, 0);
        for &id in path {
            let Some(n) = self.index.node(id) else { continue };
            let end = n.depth().min(matched);
            let take = end.saturating_sub(depth);
            depth = end;
            if n.creator() == user {
                intra += take;
            } else {
                inter += take;
            }
        }
        (intra, inter)
    }

    fn track_split(&mut self, upper: NodeId, lower: NodeId) {
        let job = if self.outstanding.contains_key(&lower) {
            Some(lower)
        } else {
            self.alias_of.get(&lower).copied()
        };
        if let Some(job) = job {
            let still_pending = self
                .index
                .node(upper)
                .is_some_and(|n| n.label() == SensitivityLabel::PendingPrivate);
            if still_pending {
                self.outstanding
                    .get_mut(&job)
                    .expect("tracked")
                    .aliases
                    .push(upper);
                self.alias_of.insert(upper, job);
            }
        }
    }

    fn label_new(&mut self, req: &Request, nodes: &[NodeId]) {
        match self.cfg.policy {
            PolicyId::GlobalShare => {
                for &id in nodes {
                    self.make_public(id);
                }
            }
            PolicyId::CachePartition => {
                for &id in nodes {
                    self.index
                        .set_label(id, SensitivityLabel::Private, false)
                        .expect("fresh node");
                }
            }
            PolicyId::PublicSystemPrompt => {
                let limit = self.cfg.public_prefix_tokens;
                for &id in nodes {
                    let depth = self.index.node(id).map_or(usize::MAX, |n| n.depth());
                    if depth <= limit {
                        self.make_public(id);
                    } else {
                        self.index
                            .set_label(id, SensitivityLabel::Private, false)
                            .expect("fresh node");
                    }
                }
            }
            PolicyId::SafeKV => {
                for &id in nodes {
                    self.submit_block(req, id);
                }
            }
        }
    }

    fn make_public(&mut self, id: NodeId) {
        self.index
            .set_label(id, SensitivityLabel::Public, false)
            .expect("fresh node");
        self.index.mark_policy_public(id);
    }

    fn submit_block(&mut self, req: &Request, id: NodeId) {
        let Some(n) = self.index.node(id) else { return };
        let end = n.depth();
        let start = end - n.edge().len();
        let toks = req.tokens.as_slice();
        let ctx = start.saturating_sub(PREFIX_CONTEXT);
        let history = req
            .history
            .iter()
            .filter_map(|h| self.texts.get(h).cloned())
            .collect();
        let input = BlockInput {
            block_id: id.0,
            user: req.user,
            text: detokenize(&toks[start..end]),
            prefix_text: detokenize(&toks[ctx..start]),
            history,
            truth: req.block_truth(start..end),
        };
        let pipeline = self.pipeline.as_ref().expect("SafeKV has a pipeline");
        if pipeline.pending() == 0 {
            let iv = self.cfg.detection.drain_interval_ms;
            self.next_drain_at = (self.now / iv).ceil() * iv;
        }
        if pipeline.submit(Job { node: id, input }) {
            self.outstanding.insert(
                id,
                Outstanding {
                    request_id: req.id,
                    aliases: Vec::new(),
                },
            );
        } else {
            self.events.push(SimEvent::Saturated {
                t_ms: self.now,
                request_id: req.id,
            });
        }
    }

    fn drain(&mut self) {
        let Some(p) = &self.pipeline else { return };
        for c in p.drain() {
            let at = self.now + c.classification.latency_ms;
            self.schedule(at, Deferred::Complete(Box::new(c)));
        }
    }

    fn complete(&mut self, c: Completed) {
        let Some(o) = self.outstanding.remove(&c.node) else {
            return;
        };
        for a in &o.aliases {
            self.alias_of.remove(a);
        }
        let mut applied = false;
        for node in std::iter::once(c.node).chain(o.aliases.iter().copied()) {
            let one = Completed { node, ..c.clone() };
            match one.apply(&mut self.index) {
                Ok(n) => applied |= n > 0,
                Err(CacheError::UnknownNode(_)) => {}
                Err(e) => tracing::warn!(?node, %e, "label write-back failed"),
            }
        }
        let cl = &c.classification;
        if applied && cl.label == SensitivityLabel::Public && cl.truth_sensitive {
            self.events.push(SimEvent::Leak {
                t_ms: self.now,
                node: c.node.0,
                request_id: o.request_id,
                resolved_tier: cl.resolved_tier,
            });
        }
    }

    fn epoch_tick(&mut self) {
        if self.monitor.config.enabled {
            let epoch = self.index.epoch();
            let fired = self.monitor.on_epoch(&mut self.index, epoch);
            if let Some(p) = &self.pipeline {
                p.note_alerts(fired.len() as u32);
            }
            for ev in fired {
                self.events.push(SimEvent::Anomaly {
                    t_ms: self.now,
                    node: ev.node.0,
                    action: ev.action,
                    entropy_now: ev.entropy_now,
                    entropy_prev: ev.entropy_prev,
                    u_pre: ev.u_pre,
                    epoch: ev.epoch,
                });
            }
        }
        self.index.advance_epoch();
        if self.cfg.policy == PolicyId::SafeKV {
            self.index.compress_all();
        }
    }

    /// Aggregate metrics over everything served so far.
    pub fn metrics(&self) -> RunMetrics {
        let benign: Vec<&RequestRecord> = self
            .records
            .iter()
            .filter(|r| r.user_kind == UserKind::Benign)
            .collect();
        let served: Vec<&&RequestRecord> = benign.iter().filter(|r| !r.dropped).collect();
        let input: u64 = served.iter().map(|r| r.input_tokens as u64).sum();
        let matched: u64 = served.iter().map(|r| r.matched_tokens as u64).sum();
        let intra: u64 = served.iter().map(|r| r.intra_matched as u64).sum();
        let inter: u64 = served.iter().map(|r| r.inter_matched as u64).sum();
        let ratio = |a: u64| if input == 0 { 0.0 } else { a as f64 / input as f64 };
        let first = served.iter().map(|r| r.arrival_ms).fold(f64::INFINITY, f64::min);
        let last = served
            .iter()
            .map(|r| r.arrival_ms + r.ttft_ms)
            .fold(f64::NEG_INFINITY, f64::max);
        let span_s = (last - first) / 1000.0;
        let mut labels = BTreeMap::new();
        for (l, c) in self.index.label_counts() {
            labels.insert(format!("{l:?}"), c);
        }
        let count = |a: AnomalyAction| {
            self.events
                .iter()
                .filter(|e| matches!(e, SimEvent::Anomaly { action, .. } if *action == a))
                .count()
        };
        RunMetrics {
            format_version: FORMAT_VERSION,
            policy: self.cfg.policy,
            requests: benign.len(),
            dropped: benign.len() - served.len(),
            probes: self.records.len() - benign.len(),
            input_tokens: input,
            matched_tokens: matched,
            hit_rate: ratio(matched),
            intra_reuse: ratio(intra),
            inter_reuse: ratio(inter),
            ttft: TtftSummary::of(served.iter().map(|r| r.ttft_ms)),
            throughput_tokens_per_s: if span_s > 0.0 { input as f64 / span_s } else { 0.0 },
            index: self.index.counters(),
            detection: self.detection_stats(),
            anomalies: self
                .events
                .iter()
                .filter(|e| matches!(e, SimEvent::Anomaly { .. }))
                .count(),
            downgrades: count(AnomalyAction::DowngradeToPrivate),
            restricts: count(AnomalyAction::Restrict),
            leak_events: self
                .events
                .iter()
                .filter(|e| matches!(e, SimEvent::Leak { .. }))
                .count(),
            saturated: self
                .events
                .iter()
                .filter(|e| matches!(e, SimEvent::Saturated { .. }))
                .count(),
            final_labels: labels,
            live_nodes: self.index.len(),
        }
    }
}

impl ProbeTarget for Simulator {
    fn probe(&mut self, at_ms: f64, user: UserId, tokens: &TokenSeq) -> Observation {
        self.advance_to(at_ms);
        let id = self.next_probe_id;
        self.next_probe_id += 1;
        let req = Request {
            id,
            user,
            owner: OwnerClass::Customer,
            session: id,
            turn: 0,
            arrival_ms: self.now,
            text: detokenize(tokens.as_slice()),
            tokens: tokens.clone(),
            secrets: Vec::new(),
            history: Vec::new(),
        };
        let r = self.serve(&req, UserKind::Attacker);
        Observation {
            ttft_ms: r.ttft_ms,
            output_tokens: 1,
        }
    }
}
