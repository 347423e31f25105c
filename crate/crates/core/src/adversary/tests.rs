use super::*;
use crate::detection::DetectionConfig;
use crate::sim::{SimConfig, Simulator};
use crate::types::{tokenize, OwnerClass, PolicyId};
use crate::workload::{Request, Sensitivity, TruthSpan};

const PREFIX: &str = "please keep this safe, the secret code is ";
const SECRET: &str = "40917";

fn digit_sets(secret: &str) -> Vec<Vec<TokenId>> {
    secret
        .bytes()
        .map(|_| (b'0'..=b'9').map(|d| TokenId(d as u32)).collect())
        .collect()
}

fn victim_sim(policy: PolicyId) -> Simulator {
    let cfg = SimConfig {
        detection: DetectionConfig::oracle(),
        ..SimConfig::with_policy(policy)
    };
    let mut sim = Simulator::new(cfg).unwrap();
    let text = format!("{PREFIX}{SECRET}.");
    let start = PREFIX.len();
    sim.push_request(Request {
        id: 0,
        user: UserId(1),
        owner: OwnerClass::Customer,
        session: 0,
        turn: 0,
        arrival_ms: 0.0,
        tokens: tokenize(&text),
        text,
        secrets: vec![TruthSpan {
            span: start..start + SECRET.len(),
            sensitivity: Sensitivity::Always,
            category: "Financial Info".into(),
            tier1_covered: false,
            context_cue: None,
        }],
        history: Vec::new(),
    });
    sim
}

fn attack(strategy: PollutionStrategy) -> AttackConfig {
    AttackConfig {
        known_prefix: tokenize(PREFIX),
        candidate_sets: digit_sets(SECRET),
        hit_threshold: HitThreshold::Adaptive,
        identities: vec![UserId(ATTACKER_ID_BASE), UserId(ATTACKER_ID_BASE + 1)],
        strategy,
        probe_schedule: ProbeSchedule::Uniform,
        max_probes: 1000,
    }
}

#[test]
fn calibration_noiseless_defaults() {
    let mut sim = Simulator::new(SimConfig::with_policy(PolicyId::GlobalShare)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = calibrate_threshold(&mut sim, 0.0, UserId(ATTACKER_ID_BASE), 100, &mut rng);
    assert_eq!((c.t_miss, c.t_hit, c.threshold()), (110.0, 10.0, 60.0));
    assert_eq!(c.per_token(), 1.0);
}

#[test]
fn midpoint_threshold_error_rate_under_noise() {
    // sigma just under (T_miss - T_hit) / 6: each side errs with
    // probability below 0.00135.
    let mut cfg = SimConfig::with_policy(PolicyId::GlobalShare);
    cfg.cost.noise_sigma = 100.0 / 6.0 * 0.99;
    cfg.cost.seed = 3;
    let mut sim = Simulator::new(cfg).unwrap();
    let (threshold, n) = (60.0, 5000);
    let mut errors = 0;
    for i in 0..n {
        let head = [(i >> 8) as u32, (i & 255) as u32];
        let seq = TokenSeq::from_ids(head.into_iter().chain((2..100u32).map(|j| (j * 7) % 256)));
        let u = UserId(ATTACKER_ID_BASE + i as u64);
        errors += (sim.probe(0.0, u, &seq).ttft_ms < threshold) as usize;
        errors += (sim.probe(0.0, u, &seq).ttft_ms >= threshold) as usize;
    }
    let rate = errors as f64 / (2 * n) as f64;
    assert!(rate < 0.003, "{rate}");
}

#[test]
fn global_share_leaks_the_whole_secret() {
    for strategy in [PollutionStrategy::FreshIdentities, PollutionStrategy::CalibrationDifferencing] {
        let mut sim = victim_sim(PolicyId::GlobalShare);
        let mut res = reconstruct(attack(strategy), &mut sim, 2000.0, 50.0, 9).unwrap();
        res.score(&tokenize(SECRET));
        assert!(res.success, "{strategy:?}: {:?}", res.recovered);
        assert!(res.probes_used <= 50);
        assert!(res.low_confidence.iter().all(|&l| !l));
    }
}

#[test]
fn oracle_safekv_matches_partition_at_chance() {
    let run = |p| {
        let mut sim = victim_sim(p);
        let mut r = reconstruct(attack(PollutionStrategy::FreshIdentities), &mut sim, 2000.0, 50.0, 4).unwrap();
        r.score(&tokenize(SECRET));
        r
    };
    let s = run(PolicyId::SafeKV);
    let p = run(PolicyId::CachePartition);
    assert_eq!(s.recovered, p.recovered);
    assert_eq!(s.per_position_correct, p.per_position_correct);
}

#[test]
fn empty_secret_is_vacuous_success() {
    let mut sim = victim_sim(PolicyId::SafeKV);
    let mut cfg = attack(PollutionStrategy::FreshIdentities);
    cfg.candidate_sets.clear();
    let mut r = reconstruct(cfg, &mut sim, 0.0, 50.0, 1).unwrap();
    r.score(&TokenSeq::new());
    assert!(r.success);
    assert_eq!(r.probes_used, 0);
}

#[test]
fn budget_exhaustion_returns_partial() {
    let mut sim = victim_sim(PolicyId::GlobalShare);
    let mut cfg = attack(PollutionStrategy::FreshIdentities);
    cfg.max_probes = 25;
    match reconstruct(cfg, &mut sim, 2000.0, 50.0, 1) {
        Err(AttackError::BudgetExhausted { partial, total }) => {
            assert_eq!(total, 5);
            assert_eq!(partial.recovered.len(), 2);
            assert_eq!(partial.probes_used, 20);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn fixed_positions_are_not_probed() {
    let mut sim = victim_sim(PolicyId::GlobalShare);
    let mut cfg = attack(PollutionStrategy::FreshIdentities);
    cfg.candidate_sets[2] = vec![TokenId(b'9' as u32)];
    let r = reconstruct(cfg, &mut sim, 2000.0, 50.0, 1).unwrap();
    assert_eq!(r.probes_used, 40);
}
