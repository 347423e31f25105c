use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::rules::RuleEngine;
use super::threshold::{adjust_threshold, ThresholdParams, ThresholdState};
use super::tiers::{Detector, DetectorSpec, DEFAULT_FNR};
use super::{BlockInput, DetectionVerdict};
use crate::cache_index::{CacheIndex, NodeId};
use crate::error::{CacheError, DetectionError};
use crate::types::SensitivityLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Tier1Mode {
    /// The regex + blacklist rule engine.
    Rules,
    /// A mock with an independent miss rate, for leak-bound experiments.
    Mock(DetectorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub tier1: Tier1Mode,
    pub tier2: DetectorSpec,
    pub tier3: DetectorSpec,
    pub threshold: ThresholdParams,
    pub queue_capacity: usize,
    pub batch_size: usize,
    pub drain_interval_ms: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self::mocks(0)
    }
}

impl DetectionConfig {
    /// Rule engine plus ground-truth Tier-2/3.
    pub fn oracle() -> Self {
        Self {
            tier1: Tier1Mode::Rules,
            tier2: DetectorSpec::oracle(2),
            tier3: DetectorSpec::oracle(3),
            threshold: ThresholdParams::default(),
            queue_capacity: 4096,
            batch_size: 64,
            drain_interval_ms: 10.0,
        }
    }

    /// Rule engine plus mock Tier-2/3 at the default miss rates.
    pub fn mocks(seed: u64) -> Self {
        Self {
            tier2: DetectorSpec::mock(2, DEFAULT_FNR[1], seed),
            tier3: DetectorSpec::mock(3, DEFAULT_FNR[2], seed),
            ..Self::oracle()
        }
    }

    /// All three tiers mocked with independent miss rates.
    pub fn independent_mocks(fnr: [f64; 3], seed: u64) -> Self {
        Self {
            tier1: Tier1Mode::Mock(DetectorSpec::mock(1, fnr[0], seed)),
            tier2: DetectorSpec::mock(2, fnr[1], seed),
            tier3: DetectorSpec::mock(3, fnr[2], seed),
            ..Self::oracle()
        }
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        if let Tier1Mode::Mock(s) = &self.tier1 {
            s.validate()?;
        }
        self.tier2.validate()?;
        self.tier3.validate()?;
        if self.tier2.tier != 2 || self.tier3.tier != 3 {
            return Err(DetectionError::InvalidSpec("tier2/tier3 specs carry wrong tier".into()));
        }
        if self.batch_size == 0 || self.queue_capacity == 0 {
            return Err(DetectionError::InvalidSpec(
                "batch_size and queue_capacity must be positive".into(),
            ));
        }
        let t = &self.threshold;
        if !(t.t_min > 0.0 && t.t_min <= t.base && t.base < 1.0) {
            return Err(DetectionError::InvalidSpec("need 0 < t_min <= base < 1".into()));
        }
        Ok(())
    }
}

/// Final outcome for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// `Public` or `Private`.
    pub label: SensitivityLabel,
    /// Tier whose verdict settled the label.
    pub resolved_tier: u8,
    /// Bit i-1 set when tier i ran and cleared the block.
    pub tiers_mask: u8,
    pub latency_ms: f64,
    pub verdicts: Vec<DetectionVerdict>,
    /// True when the block is sensitive per ground truth (with history).
    pub truth_sensitive: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub invocations: [u64; 3],
    pub resolved_at: [u64; 3],
    pub finalized_public: u64,
    pub finalized_private: u64,
    pub truth_sensitive: u64,
    /// Sensitive blocks that ended up public.
    pub leaked: u64,
    pub unavailable: u64,
    pub saturated: u64,
}

impl DetectionStats {
    pub fn classified(&self) -> u64 {
        self.finalized_public + self.finalized_private
    }

    /// Share of classified blocks settled at Tier-1 or Tier-2.
    pub fn early_resolution_rate(&self) -> f64 {
        let n = self.classified();
        if n == 0 {
            return 1.0;
        }
        (self.resolved_at[0] + self.resolved_at[1]) as f64 / n as f64
    }

    pub fn leak_rate(&self) -> f64 {
        if self.truth_sensitive == 0 {
            return 0.0;
        }
        self.leaked as f64 / self.truth_sensitive as f64
    }
}

/// Runs Tier-1 -> Tier-2 -> Tier-3 on single blocks.
#[derive(Debug)]
pub struct Classifier {
    rules: Arc<RuleEngine>,
    tier1_mock: Option<Detector>,
    tier2: Detector,
    tier3: Detector,
    tier1_latency: f64,
    params: ThresholdParams,
    threshold: ThresholdState,
    stats: DetectionStats,
}

impl Classifier {
    pub fn new(config: &DetectionConfig, rules: Arc<RuleEngine>) -> Result<Self, DetectionError> {
        config.validate()?;
        let tier1_mock = match &config.tier1 {
            Tier1Mode::Rules => None,
            Tier1Mode::Mock(s) => Some(Detector::new(s.clone())?),
        };
        Ok(Self {
            rules,
            tier1_latency: match &tier1_mock {
                Some(d) => d.sample_latency(0),
                None => 0.2,
            },
            tier1_mock,
            tier2: Detector::new(config.tier2.clone())?,
            tier3: Detector::new(config.tier3.clone())?,
            params: config.threshold,
            threshold: ThresholdState::new(config.threshold.base),
            stats: DetectionStats::default(),
        })
    }

    pub fn rules(&self) -> &Arc<RuleEngine> {
        &self.rules
    }

    pub fn threshold(&self) -> ThresholdState {
        self.threshold
    }

    pub fn adjust(&mut self, load: f64, recent_alerts: u32) {
        self.threshold = adjust_threshold(self.threshold, &self.params, load, recent_alerts);
    }

    pub fn stats(&self) -> DetectionStats {
        self.stats
    }

    pub(crate) fn stats_mut(&mut self) -> &mut DetectionStats {
        &mut self.stats
    }

    pub fn classify(&mut self, input: &BlockInput) -> Classification {
        let thr = self.threshold.current_threshold;
        let mut verdicts = Vec::with_capacity(3);
        let mut latency = 0.0;
        let mut mask = 0u8;
        let mut outcome: Option<(SensitivityLabel, u8)> = None;

        for tier in 1..=3u8 {
            self.stats.invocations[tier as usize - 1] += 1;
            let result = match tier {
                1 => {
                    latency += self.tier1_latency;
                    match &self.tier1_mock {
                        Some(d) => d.classify(input, thr),
                        None => {
                            let mut text =
                                String::with_capacity(input.prefix_text.len() + input.text.len());
                            text.push_str(&input.prefix_text);
                            text.push_str(&input.text);
                            Ok(self
                                .rules
                                .snapshot()
                                .scan_block(&text, input.prefix_text.len()))
                        }
                    }
                }
                2 => {
                    latency += self.tier2.sample_latency(input.block_id);
                    self.tier2.classify(input, thr)
                }
                _ => {
                    latency += self.tier3.sample_latency(input.block_id);
                    self.tier3.classify(input, thr)
                }
            };
            let v = match result {
                Ok(v) => v,
                Err(_) => {
                    // An unreachable detector leaves the block private.
                    self.stats.unavailable += 1;
                    outcome = Some((SensitivityLabel::Private, tier));
                    break;
                }
            };
            let (sensitive, escalate) = (v.sensitive, v.escalate);
            verdicts.push(v);
            if sensitive {
                outcome = Some((SensitivityLabel::Private, tier));
                break;
            }
            mask |= 1 << (tier - 1);
            if !escalate {
                outcome = Some((SensitivityLabel::Public, tier));
                break;
            }
        }
        let (label, resolved_tier) = outcome.unwrap_or((SensitivityLabel::Public, 3));
        let truth_sensitive = input.truth.sensitive_given(&input.history);
        self.stats.resolved_at[resolved_tier as usize - 1] += 1;
        match label {
            SensitivityLabel::Public => self.stats.finalized_public += 1,
            _ => self.stats.finalized_private += 1,
        }
        if truth_sensitive {
            self.stats.truth_sensitive += 1;
            if label == SensitivityLabel::Public {
                self.stats.leaked += 1;
            }
        }
        Classification {
            label,
            resolved_tier,
            tiers_mask: if label == SensitivityLabel::Public { mask } else { 0 },
            latency_ms: latency,
            verdicts,
            truth_sensitive,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub node: NodeId,
    pub input: BlockInput,
}

#[derive(Debug, Clone)]
pub struct Completed {
    pub node: NodeId,
    pub block_id: u64,
    pub classification: Classification,
}

impl Completed {
    /// Write the label back into the index. Blocks that were evicted or
    /// relabeled in the meantime are left alone. Returns nodes changed.
    pub fn apply(&self, index: &mut CacheIndex) -> Result<usize, CacheError> {
        match index.node(self.node) {
            Some(n) if n.label() == SensitivityLabel::PendingPrivate => {}
            _ => return Ok(0),
        }
        match self.classification.label {
            SensitivityLabel::Public => {
                let n = index.set_label(self.node, SensitivityLabel::Public, false)?;
                index.mark_detection_passed(self.node, self.classification.tiers_mask);
                Ok(n)
            }
            l => index.set_label(self.node, l, true),
        }
    }
}

/// Bounded many-producer queue drained in batches by one consumer.
#[derive(Debug)]
pub struct DetectionPipeline {
    classifier: Mutex<Classifier>,
    queue: Mutex<VecDeque<Job>>,
    capacity: usize,
    batch_size: usize,
    recent_alerts: Mutex<u32>,
}

impl DetectionPipeline {
    pub fn new(config: &DetectionConfig, rules: Arc<RuleEngine>) -> Result<Self, DetectionError> {
        Ok(Self {
            classifier: Mutex::new(Classifier::new(config, rules)?),
            queue: Mutex::new(VecDeque::new()),
            capacity: config.queue_capacity,
            batch_size: config.batch_size,
            recent_alerts: Mutex::new(0),
        })
    }

    /// Enqueue a block. On overflow the block keeps its pending label and
    /// the saturation counter grows.
    pub fn submit(&self, job: Job) -> bool {
        let mut q = self.queue.lock().unwrap();
        if q.len() >= self.capacity {
            self.classifier.lock().unwrap().stats_mut().saturated += 1;
            return false;
        }
        q.push_back(job);
        true
    }

    pub fn pending(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Alerts raised by the monitor since the last drain.
    pub fn note_alerts(&self, n: u32) {
        *self.recent_alerts.lock().unwrap() += n;
    }

    pub fn stats(&self) -> DetectionStats {
        self.classifier.lock().unwrap().stats()
    }

    pub fn threshold(&self) -> ThresholdState {
        self.classifier.lock().unwrap().threshold()
    }

    /// Classify up to one batch. The threshold is adapted to the backlog
    /// and recent alerts before the batch runs.
    pub fn drain(&self) -> Vec<Completed> {
        let batch: Vec<Job> = {
            let mut q = self.queue.lock().unwrap();
            let n = q.len().min(self.batch_size);
            q.drain(..n).collect()
        };
        if batch.is_empty() {
            return Vec::new();
        }
        let backlog = self.pending() + batch.len();
        let alerts = std::mem::take(&mut *self.recent_alerts.lock().unwrap());
        let mut c = self.classifier.lock().unwrap();
        c.adjust(backlog as f64 / self.batch_size as f64, alerts);
        batch
            .into_iter()
            .map(|job| Completed {
                node: job.node,
                block_id: job.input.block_id,
                classification: c.classify(&job.input),
            })
            .collect()
    }

    /// Drain one batch and apply it immediately.
    pub fn drain_into(&self, index: &mut CacheIndex) -> Vec<Completed> {
        let done = self.drain();
        for c in &done {
            // Nodes vanish through eviction; that is not an error here.
            let _ = c.apply(index);
        }
        done
    }

    /// Background drainer over a shared index.
    pub fn spawn_worker(
        self: &Arc<Self>,
        index: Arc<RwLock<CacheIndex>>,
        interval: Duration,
    ) -> WorkerHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let me = Arc::clone(self);
        let flag = Arc::clone(&stop);
        let join = std::thread::spawn(move || loop {
            let done = me.drain();
            if !done.is_empty() {
                let mut ix = index.write().unwrap();
                for c in &done {
                    let _ = c.apply(&mut ix);
                }
            }
            if flag.load(Ordering::Acquire) && me.pending() == 0 {
                break;
            }
            if done.is_empty() {
                std::thread::sleep(interval);
            }
        });
        WorkerHandle {
            stop,
            join: Some(join),
        }
    }
}

/// Stops the worker after the queue is empty.
#[derive(Debug)]
pub struct WorkerHandle {
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl WorkerHandle {
    pub fn finish(mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache_index::{CapacityConfig, IndexConfig};
    use crate::detection::BlockTruth;
    use crate::types::{tokenize, OwnerClass, UserId};

    fn input(id: u64, text: &str, sensitive: bool) -> BlockInput {
        BlockInput {
            block_id: id,
            user: UserId(1),
            text: text.into(),
            truth: BlockTruth {
                sensitive,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn classifier(cfg: DetectionConfig) -> Classifier {
        Classifier::new(&cfg, Arc::new(RuleEngine::default())).unwrap()
    }

    #[test]
    fn benign_oracle_goes_public() {
        let mut c = classifier(DetectionConfig::oracle());
        let out = c.classify(&input(1, "the weather is nice", false));
        assert_eq!(out.label, SensitivityLabel::Public);
        assert_eq!(out.resolved_tier, 2);
        assert_eq!(out.tiers_mask, 0b011);
    }

    #[test]
    fn tier1_hit_short_circuits() {
        let mut c = classifier(DetectionConfig::oracle());
        let out = c.classify(&input(1, "ssn 123-45-6789", true));
        assert_eq!(out.label, SensitivityLabel::Private);
        assert_eq!(out.resolved_tier, 1);
        assert_eq!(c.stats().invocations, [1, 0, 0]);
    }

    #[test]
    fn public_requires_every_tier_to_clear() {
        let mut cfg = DetectionConfig::independent_mocks([1.0, 1.0, 0.0], 5);
        cfg.tier2.false_negative_rate = 1.0;
        let mut c = classifier(cfg);
        let out = c.classify(&input(1, "x", true));
        // Tiers 1 and 2 miss; the miss score forces Tier-3, which catches it.
        assert_eq!(out.label, SensitivityLabel::Private);
        assert_eq!(out.resolved_tier, 3);
    }

    #[test]
    fn leak_rate_tracks_product_of_miss_rates() {
        let mut c = classifier(DetectionConfig::independent_mocks([0.5, 0.5, 0.5], 11));
        for i in 0..40_000 {
            c.classify(&input(i, "x", true));
        }
        let r = c.stats().leak_rate();
        assert!((r - 0.125).abs() < 0.01, "{r}");
    }

    #[test]
    fn queue_overflow_keeps_block_pending() {
        let mut cfg = DetectionConfig::oracle();
        cfg.queue_capacity = 2;
        let p = DetectionPipeline::new(&cfg, Arc::new(RuleEngine::default())).unwrap();
        let job = |i| Job {
            node: NodeId(i),
            input: input(i, "a", false),
        };
        assert!(p.submit(job(1)));
        assert!(p.submit(job(2)));
        assert!(!p.submit(job(3)));
        assert_eq!(p.stats().saturated, 1);
        assert_eq!(p.drain().len(), 2);
    }

    #[test]
    fn drain_applies_labels() {
        let mut cfg = DetectionConfig::oracle();
        cfg.batch_size = 1;
        let p = DetectionPipeline::new(&cfg, Arc::new(RuleEngine::default())).unwrap();
        let mut ix = CacheIndex::new(IndexConfig {
            capacity: CapacityConfig::tokens(1 << 16, 0, 0),
            tiered: false,
        })
        .unwrap();
        let a = ix
            .insert(&tokenize("hello there"), UserId(1), OwnerClass::Customer, 0)
            .unwrap()
            .terminal;
        let b = ix
            .insert(&tokenize("ssn 123-45-6789"), UserId(1), OwnerClass::Customer, 0)
            .unwrap()
            .terminal;
        p.submit(Job {
            node: a,
            input: input(1, "hello there", false),
        });
        p.submit(Job {
            node: b,
            input: input(2, "ssn 123-45-6789", true),
        });
        assert_eq!(p.drain_into(&mut ix).len(), 1);
        assert_eq!(p.drain_into(&mut ix).len(), 1);
        assert_eq!(ix.node(a).unwrap().label(), SensitivityLabel::Public);
        assert_eq!(ix.node(a).unwrap().audit().tiers_passed, 0b011);
        assert_eq!(ix.node(b).unwrap().label(), SensitivityLabel::Private);
    }

    #[test]
    fn worker_drains_shared_index() {
        let p = Arc::new(
            DetectionPipeline::new(&DetectionConfig::oracle(), Arc::new(RuleEngine::default()))
                .unwrap(),
        );
        let ix = Arc::new(RwLock::new(
            CacheIndex::new(IndexConfig {
                capacity: CapacityConfig::tokens(1 << 16, 0, 0),
                tiered: false,
            })
            .unwrap(),
        ));
        let w = p.spawn_worker(Arc::clone(&ix), Duration::from_millis(1));
        let mut nodes = Vec::new();
        for i in 0..50u64 {
            let text = format!("message number {i}");
            let n = ix
                .write()
                .unwrap()
                .insert(&tokenize(&text), UserId(i), OwnerClass::Customer, 0)
                .unwrap()
                .terminal;
            nodes.push(n);
            p.submit(Job {
                node: n,
                input: input(i, &text, false),
            });
        }
        w.finish();
        let ix = ix.read().unwrap();
        for n in nodes {
            assert_eq!(ix.node(n).unwrap().label(), SensitivityLabel::Public);
        }
    }
}
