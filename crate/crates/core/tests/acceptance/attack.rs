use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safekv_core::adversary::{run_campaign, AttackSettings, AttackTarget, ProbeTarget};
use safekv_core::detection::{DetectionConfig, DEFAULT_FNR};
use safekv_core::monitor::entropy_of;
use safekv_core::sim::{run_scenario, ScenarioConfig, SimConfig, SimEvent, Simulator};
use safekv_core::types::tokenize;
use safekv_core::workload::{Request, Scenario, SecretFamily, Sensitivity, TruthSpan, WorkloadSpec};
use safekv_core::{OwnerClass, PolicyId, TokenId, UserId};

use crate::stats::{binomial_ci99, mean};
use crate::{check, Outcome};

pub fn defense_rate() -> Outcome {
    let mut safekv = Vec::new();
    let mut global = Vec::new();
    for seed in 1..=5u64 {
        let cfg = ScenarioConfig {
            name: "defense".into(),
            workload: WorkloadSpec {
                n_requests: 800,
                families: SecretFamily::PROBEABLE.to_vec(),
                ..WorkloadSpec::preset(Scenario::SingleRequestPII)
            },
            policies: vec![PolicyId::GlobalShare, PolicyId::SafeKV],
            detection: DetectionConfig::independent_mocks(DEFAULT_FNR, seed),
            attack: Some(AttackSettings {
                n_secrets: 200,
                ..AttackSettings::default()
            }),
            seed,
            ..ScenarioConfig::default()
        };
        if cfg.cost.noise_sigma != 0.0 {
            return Err("cost model is not noiseless".into());
        }
        let art = run_scenario(&cfg).map_err(|e| e.to_string())?;
        for run in &art.runs {
            let rep = run.attack.as_ref().ok_or("missing attack report")?;
            if rep.n_secrets != 200 {
                return Err(format!("seed {seed}: only {} attackable secrets", rep.n_secrets));
            }
            match run.policy {
                PolicyId::SafeKV => safekv.push(rep.defense_rate),
                _ => global.push(rep.defense_rate),
            }
        }
    }
    let detail = format!(
        "SafeKV {:?} (mean {:.4}), GlobalShare {:?}",
        safekv,
        mean(&safekv),
        global
    );
    check(
        mean(&safekv) >= 0.94 && safekv.iter().all(|&d| d >= 0.91) && global.iter().all(|&d| d <= 0.03),
        detail,
    )
}

const VICTIMS: usize = 2000;
const DIGITS: usize = 5;

/// 2000 victims, each sending a unique prompt that ends in a 5-digit pin.
fn pin_victims(seed: u64) -> (Vec<Request>, Vec<AttackTarget>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reqs = Vec::new();
    let mut targets = Vec::new();
    let digits: Vec<TokenId> = (b'0'..=b'9').map(|d| TokenId(d as u32)).collect();
    for i in 0..VICTIMS {
        let pin: String = (0..DIGITS).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect();
        let prefix = format!("ticket {i:05} from the help desk: your new access pin is ");
        let text = format!("{prefix}{pin}. keep it private.");
        let arrival = i as f64 * 20.0;
        reqs.push(Request {
            id: i as u64,
            user: UserId(i as u64 + 1),
            owner: OwnerClass::Customer,
            session: i as u64,
            turn: 0,
            arrival_ms: arrival,
            tokens: tokenize(&text),
            text,
            secrets: vec![TruthSpan {
                span: prefix.len()..prefix.len() + DIGITS,
                sensitivity: Sensitivity::Always,
                category: "Identity Information".into(),
                tier1_covered: false,
                context_cue: None,
            }],
            history: Vec::new(),
        });
        targets.push(AttackTarget {
            request_id: i as u64,
            victim: UserId(i as u64 + 1),
            family: "pin".into(),
            start_ms: arrival + 2000.0,
            known_prefix: tokenize(&prefix),
            candidate_sets: vec![digits.clone(); DIGITS],
            truth: tokenize(&pin),
        });
    }
    (reqs, targets)
}

pub fn oracle_chance_bound() -> Outcome {
    let (reqs, targets) = pin_victims(3);
    let settings = AttackSettings {
        n_secrets: VICTIMS,
        seed: 3,
        ..AttackSettings::default()
    };
    let campaign = |policy| -> Result<_, String> {
        let cfg = SimConfig {
            detection: DetectionConfig::oracle(),
            ..SimConfig::with_policy(policy)
        };
        let mut sim = Simulator::new(cfg).map_err(|e| e.to_string())?;
        sim.load(&reqs);
        let rep = run_campaign(&mut sim, &targets, &settings);
        sim.finish();
        Ok(rep)
    };
    let s = campaign(PolicyId::SafeKV)?;
    let p = campaign(PolicyId::CachePartition)?;
    let n = s.probed_positions as u64;
    let (lo, hi) = binomial_ci99(0.1, n);
    let rate = s.per_token_recovery_rate;
    // The guesses must match; `downgraded_mid_attack` legitimately differs
    // because SafeKV shows the attacker public prefix hits until the
    // monitor withdraws them.
    let guesses = |r: &safekv_core::adversary::CampaignReport| -> Vec<_> {
        r.secrets
            .iter()
            .map(|o| (o.request_id, o.recovered.clone(), o.correct, o.success, o.probes_used))
            .collect()
    };
    let identical = guesses(&s) == guesses(&p) && s.per_position_correct == p.per_position_correct;
    check(
        n >= 10_000 && rate >= lo && rate <= hi && identical,
        format!(
            "recovered {}/{n} = {rate:.4}, chance CI [{lo:.4}, {hi:.4}]; identical to CachePartition: {identical}",
            s.probed_correct
        ),
    )
}

pub fn monitor_exposure() -> Outcome {
    let entropy_ok = entropy_of(10, 1) == 0.1 && entropy_of(10, 10) == 1.0 && entropy_of(4, 2) == 0.5;
    let text = "for the record, the locker combination is 31-17-42 and the spare key sits under the mat.";
    let mut sim = Simulator::new(SimConfig {
        detection: DetectionConfig::oracle(),
        ..SimConfig::with_policy(PolicyId::SafeKV)
    })
    .map_err(|e| e.to_string())?;
    let interval = sim.config().monitor.epoch_interval_ms;
    // No ground-truth span: every tier clears the blocks, so the secret is
    // published by mistake.
    sim.push_request(Request {
        id: 0,
        user: UserId(1),
        owner: OwnerClass::Customer,
        session: 0,
        turn: 0,
        arrival_ms: 0.0,
        tokens: tokenize(text),
        text: text.into(),
        secrets: Vec::new(),
        history: Vec::new(),
    });
    sim.advance_to(4500.0);
    let seq = tokenize(text);
    let cold = Simulator::new(SimConfig::with_policy(PolicyId::SafeKV))
        .map_err(|e| e.to_string())?
        .probe(0.0, UserId(2), &seq)
        .ttft_ms;
    // Two identities hit the leaked prefix inside one monitor window.
    let first_probe = 5100.0;
    let exposed: Vec<f64> = [(first_probe, 100), (first_probe + 100.0, 101)]
        .iter()
        .map(|&(t, u)| sim.probe(t, UserId(u), &seq).ttft_ms)
        .collect();
    let window_end = ((first_probe + 100.0) / interval).floor() * interval + interval;
    // Simultaneous, so no prober's own copy can be published before the
    // others look.
    let after: Vec<f64> = (200..203)
        .map(|u| sim.probe(9000.0, UserId(u), &seq).ttft_ms)
        .collect();
    let anomaly = sim.events().iter().find_map(|e| match e {
        SimEvent::Anomaly {
            t_ms,
            entropy_now,
            entropy_prev,
            ..
        } => Some((*t_ms, *entropy_now, *entropy_prev)),
        _ => None,
    });
    let Some((t_anom, h_now, h_prev)) = anomaly else {
        return Err(format!("no downgrade; exposed probes {exposed:?}"));
    };
    let epochs = (t_anom - window_end) / interval;
    let was_exposed = exposed.iter().all(|&t| t < cold);
    let closed = after.iter().all(|&t| t == cold);
    check(
        entropy_ok && was_exposed && epochs <= 2.0 && closed && h_now == entropy_of(2, 2) && h_prev == 0.0,
        format!(
            "exposed ttft {exposed:?} vs cold {cold}; downgrade at {t_anom} ms ({epochs} epochs after window end {window_end}), \
             entropy {h_prev} -> {h_now}; post-downgrade non-creator ttft {after:?}; H(10 hits, 1 user) = {}",
            entropy_of(10, 1)
        ),
    )
}

