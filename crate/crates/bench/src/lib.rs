//! Shared fixtures for the benchmarks.

use safekv_core::workload::{generate, Scenario, Workload, WorkloadSpec};
use safekv_core::{CacheIndex, IndexConfig};

/// Multi-turn chat workload of `n` requests, fixed seed.
pub fn chat_workload(n: usize) -> Workload {
    let spec = WorkloadSpec {
        n_requests: n,
        seed: 42,
        ..WorkloadSpec::preset(Scenario::MultiTurnChat)
    };
    generate(&spec).expect("preset generates")
}

/// Index holding every request of `w`, inserted in arrival order.
pub fn filled_index(w: &Workload) -> CacheIndex {
    let mut idx = CacheIndex::new(IndexConfig::default()).expect("default config");
    for r in &w.requests {
        idx.insert(&r.tokens, r.user, r.owner, 0).expect("fits in default capacity");
    }
    idx
}
