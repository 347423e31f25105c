//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.
//!
//! `cargo test -p safekv-core --test acceptance [-- 3 7]` runs a subset.
//! Set `SAFEKV_BLESS=1` to rewrite the golden artifact hashes.

mod attack;
mod detection;
mod golden;
mod index;
mod policy;
mod stats;

use std::time::Instant;

/// Outcome of one criterion: a short measurement summary either way.
pub type Outcome = Result<String, String>;

/// Turn a condition into an outcome carrying `detail`.
pub fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const CRITERIA: [(u32, &str, fn() -> Outcome); 11] = [
    (1, "leak bound", detection::leak_bound),
    (2, "defense rate", attack::defense_rate),
    (3, "oracle chance bound", attack::oracle_chance_bound),
    (4, "prefix-match oracle equivalence", index::oracle_equivalence),
    (5, "compression transparency", index::compression_transparency),
    (6, "eviction order and safety", index::eviction_suite),
    (7, "entropy monitor bounded exposure", attack::monitor_exposure),
    (8, "policy performance ordering", policy::ordering),
    (9, "tier workload split", detection::tier_split),
    (10, "determinism goldens", golden::goldens),
    (11, "rule engine", detection::rule_engine),
];

fn main() {
    // Numeric arguments select criteria; cargo's own flags are ignored.
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let started = Instant::now();
    for (n, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("PASS criterion {n:>2} {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {n:>2} {name} ({secs:.1}s): {d}");
            }
        }
    }
    println!(
        "acceptance: {failed} failed, total {:.1}s",
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
