use super::config::SchedulingMode;

/// A request waiting for admission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pending {
    pub request_id: u64,
    pub arrival_ms: f64,
    /// Prefix the request would reuse right now.
    pub matched_tokens: usize,
}

/// Order a pending set for admission. FCFS sorts by arrival, then id; LPM
/// sorts by matched prefix (longest first), then arrival, then id.
pub fn batch_step(mut pending: Vec<Pending>, mode: SchedulingMode) -> Vec<Pending> {
    match mode {
        SchedulingMode::Fcfs => pending.sort_by(|a, b| {
            a.arrival_ms
                .total_cmp(&b.arrival_ms)
                .then(a.request_id.cmp(&b.request_id))
        }),
        SchedulingMode::Lpm => pending.sort_by(|a, b| {
            b.matched_tokens
                .cmp(&a.matched_tokens)
                .then(a.arrival_ms.total_cmp(&b.arrival_ms))
                .then(a.request_id.cmp(&b.request_id))
        }),
    }
    pending
}
