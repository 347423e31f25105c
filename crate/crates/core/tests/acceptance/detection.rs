use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safekv_core::detection::{
    BlockInput, BlockTruth, Classifier, DetectionConfig, PatternConfig, PatternRule, PatternSet,
    RuleEngine, RuleKind, DEFAULT_FNR,
};
use safekv_core::sim::{run_policy, ScenarioConfig};
use safekv_core::workload::{generate, tier1_corpus, Scenario, WorkloadSpec};
use safekv_core::{PolicyId, UserId};

use crate::stats::binomial_ci99;
use crate::{check, Outcome};

pub fn leak_bound() -> Outcome {
    const N: u64 = 100_000;
    let mut c = Classifier::new(
        &DetectionConfig::independent_mocks(DEFAULT_FNR, 2024),
        Arc::new(RuleEngine::default()),
    )
    .map_err(|e| e.to_string())?;
    for i in 0..N {
        c.classify(&BlockInput {
            block_id: i,
            user: UserId(1 + i % 50),
            text: format!("block {i}"),
            truth: BlockTruth {
                sensitive: true,
                ..Default::default()
            },
            ..Default::default()
        });
    }
    let s = c.stats();
    let p = DEFAULT_FNR.iter().product::<f64>();
    let (lo, hi) = binomial_ci99(p, s.truth_sensitive);
    let rate = s.leak_rate();
    check(
        s.classified() >= N && rate >= lo && rate <= hi && rate <= 0.03,
        format!(
            "leaked {}/{} = {rate:.5}, expected {p:.5} in [{lo:.5}, {hi:.5}]",
            s.leaked, s.truth_sensitive
        ),
    )
}

pub fn tier_split() -> Outcome {
    let mut lines = Vec::new();
    let (mut early, mut total) = (0u64, 0u64);
    for scenario in Scenario::ALL {
        let cfg = ScenarioConfig {
            workload: WorkloadSpec::preset(scenario),
            detection: DetectionConfig::mocks(7),
            ..ScenarioConfig::default()
        };
        let w = generate(&cfg.workload_spec()).map_err(|e| e.to_string())?;
        let run = run_policy(&w, cfg.sim_config(PolicyId::SafeKV), None).map_err(|e| e.to_string())?;
        let d = run.metrics.detection.ok_or("no detection stats")?;
        early += d.resolved_at[0] + d.resolved_at[1];
        total += d.classified();
        lines.push(format!("{} {:.4}", scenario.name(), d.early_resolution_rate()));
    }
    let rate = early as f64 / total as f64;
    check(
        rate >= 0.92,
        format!("{early}/{total} = {rate:.4} at Tier-1/2 ({})", lines.join(", ")),
    )
}

pub fn rule_engine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rules = PatternSet::defaults();
    let corpus = tier1_corpus(5000, &mut rng);
    let hits = corpus
        .iter()
        .filter(|(text, cat)| rules.scan(text).categories.iter().any(|c| c == cat))
        .count();
    let recall = hits as f64 / corpus.len() as f64;

    let reload = hot_reload()?;

    // Latency over whole prompts of the multi-turn preset.
    let w = generate(&WorkloadSpec::preset(Scenario::MultiTurnChat)).map_err(|e| e.to_string())?;
    let engine = RuleEngine::default();
    let mut times: Vec<f64> = w
        .requests
        .iter()
        .map(|r| {
            let t = Instant::now();
            std::hint::black_box(engine.scan(&r.text));
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let p99 = times[(times.len() * 99).div_ceil(100) - 1];
    let chars = w.requests.iter().map(|r| r.text.len()).sum::<usize>() / w.requests.len();
    check(
        recall == 1.0 && mean < 1.0 && p99 < 1.0,
        format!(
            "recall {hits}/{} ; {reload} ; scan mean {mean:.3} ms p99 {p99:.3} ms over {} prompts (~{chars} chars)",
            corpus.len(),
            times.len()
        ),
    )
}

/// Scanners run while the rule file flips between two versions; every scan
/// must match exactly one version's verdict, and a broken file must leave
/// the active set untouched.
fn hot_reload() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("privacy_pattern_config.json");
    let a = PatternConfig::defaults();
    let mut b = a.clone();
    b.version = 2;
    b.rules.push(PatternRule {
        rule_id: "codename".into(),
        category: "Blacklisted Term".into(),
        kind: RuleKind::Blacklist,
        pattern: "BLUEHERON".into(),
        enabled: true,
    });
    let text = "ssn 123-45-6789 for BLUEHERON";
    let va = PatternSet::compile(a.clone()).map_err(|e| e.to_string())?.scan(text);
    let vb = PatternSet::compile(b.clone()).map_err(|e| e.to_string())?.scan(text);
    if va == vb {
        return Err("reload fixture versions are indistinguishable".into());
    }
    std::fs::write(&path, a.to_json()).map_err(|e| e.to_string())?;
    let engine = Arc::new(RuleEngine::load(&path).map_err(|e| e.to_string())?);
    let stop = Arc::new(AtomicBool::new(false));
    let scanners: Vec<_> = (0..4)
        .map(|_| {
            let (engine, stop, va, vb) = (engine.clone(), stop.clone(), va.clone(), vb.clone());
            std::thread::spawn(move || {
                let (mut seen_a, mut seen_b, mut torn) = (0u64, 0u64, 0u64);
                while !stop.load(Ordering::Relaxed) {
                    let v = engine.scan(text);
                    if v == va {
                        seen_a += 1;
                    } else if v == vb {
                        seen_b += 1;
                    } else {
                        torn += 1;
                    }
                }
                (seen_a, seen_b, torn)
            })
        })
        .collect();
    let mut reloads = 0;
    for i in 0..150 {
        let cfg = if i % 2 == 0 { &b } else { &a };
        std::fs::write(&path, cfg.to_json()).map_err(|e| e.to_string())?;
        engine.reload(&path).map_err(|e| e.to_string())?;
        reloads += 1;
    }
    let version = engine.snapshot().version();
    std::fs::write(&path, "{\"version\": 9, \"rules\": [{\"rule_id\": \"x\", \"category\": \"c\", \"kind\": \"regex\", \"pattern\": \"(\"}]}")
        .map_err(|e| e.to_string())?;
    let broken_rejected = engine.reload(&path).is_err() && engine.snapshot().version() == version;
    stop.store(true, Ordering::Relaxed);
    let (mut sa, mut sb, mut torn) = (0, 0, 0);
    for h in scanners {
        let (x, y, z) = h.join().map_err(|_| "scanner panicked")?;
        sa += x;
        sb += y;
        torn += z;
    }
    if torn > 0 || !broken_rejected {
        return Err(format!("torn scans {torn}, broken config rejected: {broken_rejected}"));
    }
    Ok(format!("{reloads} reloads, {sa}+{sb} scans, 0 torn, bad file rejected"))
}
