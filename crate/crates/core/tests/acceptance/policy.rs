use safekv_core::detection::DetectionConfig;
use safekv_core::sim::{run_policy, ScenarioConfig, SimConfig};
use safekv_core::workload::{generate, Scenario, Workload, WorkloadSpec};
use safekv_core::{PolicyId, TokenId};

use crate::{check, Outcome};

fn lcp(a: &[TokenId], b: &[TokenId]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Prefill tokens per request that only cross-user sharing saves: the
/// longest prefix of each prompt shared with any earlier prompt, minus the
/// longest shared with the same user's earlier prompts.
fn cross_user_tokens(w: &Workload) -> u64 {
    let mut order: Vec<usize> = (0..w.requests.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&w.requests[a], &w.requests[b]);
        ra.arrival_ms.total_cmp(&rb.arrival_ms).then(ra.id.cmp(&rb.id))
    });
    let mut total = 0u64;
    for (k, &i) in order.iter().enumerate() {
        let r = &w.requests[i];
        let (mut any, mut own) = (0, 0);
        for &j in &order[..k] {
            let p = &w.requests[j];
            let l = lcp(r.tokens.as_slice(), p.tokens.as_slice());
            any = any.max(l);
            if p.user == r.user {
                own = own.max(l);
            }
        }
        total += (any - own) as u64;
    }
    total
}

pub fn ordering() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 1..=5u64 {
        let cfg = ScenarioConfig {
            workload: WorkloadSpec::preset(Scenario::MultiTurnChat),
            seed,
            ..ScenarioConfig::default()
        };
        let w = generate(&cfg.workload_spec()).map_err(|e| e.to_string())?;
        let with = |policy, detection: Option<DetectionConfig>| -> Result<f64, String> {
            let mut sim: SimConfig = cfg.sim_config(policy);
            if let Some(d) = detection {
                sim.detection = d;
            }
            Ok(run_policy(&w, sim, None).map_err(|e| e.to_string())?.metrics.ttft.mean)
        };
        let g = with(PolicyId::GlobalShare, None)?;
        let so = with(PolicyId::SafeKV, Some(DetectionConfig::oracle()))?;
        let sm = with(PolicyId::SafeKV, Some(DetectionConfig::mocks(seed)))?;
        let p = with(PolicyId::CachePartition, None)?;
        let predicted = cfg.cost.c_prefill * cross_user_tokens(&w) as f64 / w.requests.len() as f64;
        let gap = p - g;
        let ordered = g <= so && so <= sm && sm <= p;
        let close = (so - g) / g <= 0.15;
        let analytic = (gap - predicted).abs() <= 0.10 * predicted;
        ok &= ordered && close && analytic;
        lines.push(format!(
            "seed {seed}: {g:.1} <= {so:.1} <= {sm:.1} <= {p:.1} [{}], oracle +{:.1}%, partition gap {gap:.1} vs predicted {predicted:.1}",
            if ordered { "ordered" } else { "NOT ordered" },
            100.0 * (so - g) / g
        ));
    }
    check(ok, lines.join("; "))
}
