use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::external::{ExternalDetector, ExternalSpec};
use super::{BlockInput, DetectionVerdict};
use crate::error::DetectionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    /// Reads the workload's ground truth and never errs.
    Oracle,
    /// Ground truth flipped with the configured error rates.
    MockWithFnr,
    /// Delegates to an external process.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Constant { ms: f64 },
    LogNormal { median_ms: f64, sigma: f64 },
}

impl LatencyModel {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            LatencyModel::Constant { ms } => ms,
            LatencyModel::LogNormal { median_ms, sigma } => LogNormal::new(median_ms.ln(), sigma)
                .map(|d| d.sample(rng))
                .unwrap_or(median_ms),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            LatencyModel::Constant { ms } if !(ms >= 0.0) => Err("latency must be >= 0".into()),
            LatencyModel::LogNormal { median_ms, sigma } if !(median_ms > 0.0 && sigma >= 0.0) => {
                Err("lognormal needs median_ms > 0 and sigma >= 0".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub tier: u8,
    pub mode: DetectorMode,
    #[serde(default)]
    pub false_negative_rate: f64,
    #[serde(default)]
    pub false_positive_rate: f64,
    /// Share of correctly cleared benign blocks given a middling score.
    #[serde(default = "uncertain_default")]
    pub uncertain_rate: f64,
    pub latency_model: LatencyModel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalSpec>,
}

fn uncertain_default() -> f64 {
    0.05
}

/// Error rates used when mocks stand in for all three tiers.
pub const DEFAULT_FNR: [f64; 3] = [0.63, 0.04, 0.29];

impl DetectorSpec {
    pub fn oracle(tier: u8) -> Self {
        Self {
            tier,
            mode: DetectorMode::Oracle,
            false_negative_rate: 0.0,
            false_positive_rate: 0.0,
            uncertain_rate: uncertain_default(),
            latency_model: default_latency(tier),
            seed: 0,
            external: None,
        }
    }

    pub fn mock(tier: u8, fnr: f64, seed: u64) -> Self {
        Self {
            mode: DetectorMode::MockWithFnr,
            false_negative_rate: fnr,
            seed,
            ..Self::oracle(tier)
        }
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        let bad = |m: String| Err(DetectionError::InvalidSpec(m));
        if !(1..=3).contains(&self.tier) {
            return bad(format!("tier {} outside 1..=3", self.tier));
        }
        for (name, v) in [
            ("false_negative_rate", self.false_negative_rate),
            ("false_positive_rate", self.false_positive_rate),
            ("uncertain_rate", self.uncertain_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.mode == DetectorMode::External && self.external.is_none() {
            return bad("external mode needs an `external` command".into());
        }
        self.latency_model
            .validate()
            .or_else(bad)
    }
}

/// Latency defaults: cheap rules, a compact model, an expensive LLM check.
pub fn default_latency(tier: u8) -> LatencyModel {
    match tier {
        1 => LatencyModel::Constant { ms: 0.2 },
        2 => LatencyModel::LogNormal {
            median_ms: 50.0,
            sigma: 0.3,
        },
        _ => LatencyModel::LogNormal {
            median_ms: 800.0,
            sigma: 0.3,
        },
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-block stream so verdicts depend only on (seed, tier, block id).
pub(crate) fn block_rng(seed: u64, tier: u8, block_id: u64, salt: u64) -> ChaCha8Rng {
    let s = splitmix(seed ^ splitmix(block_id ^ splitmix(tier as u64 ^ (salt << 8))));
    ChaCha8Rng::seed_from_u64(s)
}

/// A Tier-1/2/3 detector built from a [`DetectorSpec`].
#[derive(Debug)]
pub struct Detector {
    spec: DetectorSpec,
    external: Option<ExternalDetector>,
}

impl Detector {
    pub fn new(spec: DetectorSpec) -> Result<Self, DetectionError> {
        spec.validate()?;
        let external = match (&spec.mode, &spec.external) {
            (DetectorMode::External, Some(e)) => Some(ExternalDetector::spawn(e)?),
            _ => None,
        };
        Ok(Self { spec, external })
    }

    pub fn spec(&self) -> &DetectorSpec {
        &self.spec
    }

    pub fn tier(&self) -> u8 {
        self.spec.tier
    }

    /// Verdict on one block. Tier-3 sees the history; Tier-2 does not.
    pub fn classify(
        &self,
        input: &BlockInput,
        threshold: f64,
    ) -> Result<DetectionVerdict, DetectionError> {
        let tier = self.spec.tier;
        let history: &[String] = if tier >= 3 { &input.history } else { &[] };
        let mut v = match self.spec.mode {
            DetectorMode::Oracle => self.oracle(input, history),
            DetectorMode::MockWithFnr => self.mock(input, history),
            DetectorMode::External => {
                let ext = self.external.as_ref().expect("external detector spawned");
                let mut v = ext.classify(input.block_id, &input.text, history)?;
                v.tier = tier;
                v
            }
        };
        v.escalate = if tier == 1 {
            !v.sensitive
        } else {
            tier < 3 && v.score < threshold
        };
        Ok(v)
    }

    fn oracle(&self, input: &BlockInput, history: &[String]) -> DetectionVerdict {
        let truth = &input.truth;
        if truth.sensitive_given(history) {
            return DetectionVerdict {
                sensitive: true,
                tier: self.spec.tier,
                score: 1.0,
                categories: truth.categories.clone(),
                escalate: false,
            };
        }
        // Benign on its own but not in context: the honest answer is "unsure".
        let score = if truth.context_cue.is_some() { 0.0 } else { 1.0 };
        DetectionVerdict::benign(self.spec.tier, score)
    }

    fn mock(&self, input: &BlockInput, history: &[String]) -> DetectionVerdict {
        let s = &self.spec;
        let truth = &input.truth;
        let mut rng = block_rng(s.seed, s.tier, input.block_id, 0);
        let err: f64 = rng.random();
        let u: f64 = rng.random();
        if truth.sensitive_given(history) {
            if err < s.false_negative_rate {
                // Misses carry a score below any reachable threshold.
                return DetectionVerdict::benign(s.tier, 0.1 * u);
            }
            return DetectionVerdict {
                sensitive: true,
                tier: s.tier,
                score: if s.tier == 1 { 1.0 } else { 1.0 - s.false_negative_rate },
                categories: truth.categories.clone(),
                escalate: false,
            };
        }
        if err < s.false_positive_rate {
            return DetectionVerdict {
                sensitive: true,
                tier: s.tier,
                score: 1.0 - s.false_positive_rate,
                categories: vec!["False Positive".into()],
                escalate: false,
            };
        }
        let score = if truth.context_cue.is_some() {
            0.2 + 0.3 * u
        } else if rng.random::<f64>() < s.uncertain_rate {
            0.3 + 0.3 * u
        } else {
            0.6 + 0.4 * u
        };
        DetectionVerdict::benign(s.tier, score)
    }

    /// Simulated service time for this block at this tier.
    pub fn sample_latency(&self, block_id: u64) -> f64 {
        let mut rng = block_rng(self.spec.seed, self.spec.tier, block_id, 1);
        self.spec.latency_model.sample(&mut rng)
    }
}
