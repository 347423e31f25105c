//! Entropy-based runtime fallback.
//!
//! Every shared block keeps a two-window access history. A block whose
//! access entropy (distinct users / hits) jumps while its previous window
//! showed little or no cross-user reuse is treated as a probable leak:
//! customer blocks are downgraded to private, business blocks are restricted
//! and an alert is emitted.

use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::cache_index::{CacheIndex, NodeId};
use crate::types::{OwnerClass, SensitivityLabel, UserId};

/// Distinct users tracked exactly per window before the tracker saturates.
pub const USER_TRACKER_CAPACITY: usize = 64;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Window {
    hit_cur: u64,
    users: Vec<UserId>,
    /// Hits observed after saturation; each is counted as a new user.
    saturated_hits: u64,
    hit_pre: u64,
    u_pre: u64,
    rolls: u64,
}

impl Window {
    fn u_cnt(&self) -> u64 {
        self.users.len() as u64 + self.saturated_hits
    }
}

/// Rolling per-block access statistics.
#[derive(Debug, Default)]
pub struct AccessStats {
    inner: Mutex<Window>,
}

/// Point-in-time copy of [`AccessStats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessSnapshot {
    pub hit_cur: u64,
    pub u_cnt: u64,
    pub hit_pre: u64,
    pub u_pre: u64,
    /// Windows closed since the block was created.
    pub windows_closed: u64,
}

impl Clone for AccessStats {
    fn clone(&self) -> Self {
        Self {
            inner: Mutex::new(self.lock().clone()),
        }
    }
}

impl AccessStats {
    fn lock(&self) -> std::sync::MutexGuard<'_, Window> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn record(&self, user: UserId) {
        let mut w = self.lock();
        w.hit_cur += 1;
        if w.users.contains(&user) {
            return;
        }
        if w.users.len() < USER_TRACKER_CAPACITY {
            w.users.push(user);
        } else {
            w.saturated_hits += 1;
        }
    }

    pub fn roll(&self) {
        let mut w = self.lock();
        w.hit_pre = w.hit_cur;
        w.u_pre = w.u_cnt();
        w.hit_cur = 0;
        w.users.clear();
        w.saturated_hits = 0;
        w.rolls += 1;
    }

    pub fn snapshot(&self) -> AccessSnapshot {
        let w = self.lock();
        AccessSnapshot {
            hit_cur: w.hit_cur,
            u_cnt: w.u_cnt(),
            hit_pre: w.hit_pre,
            u_pre: w.u_pre,
            windows_closed: w.rolls,
        }
    }

    pub fn is_idle(&self) -> bool {
        let w = self.lock();
        w.hit_cur == 0 && w.hit_pre == 0
    }
}

/// Access entropy `u_cnt / hits`, defined as 0 for an empty window.
pub fn entropy_of(hits: u64, users: u64) -> f64 {
    if hits == 0 {
        0.0
    } else {
        users as f64 / hits as f64
    }
}

pub fn entropy(stats: &AccessSnapshot) -> f64 {
    entropy_of(stats.hit_cur, stats.u_cnt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub enabled: bool,
    /// Minimum rise in entropy between windows that counts as a shift.
    pub entropy_jump: f64,
    /// Previous-window distinct users at or below which reuse is "minimal".
    pub u_pre_max: u64,
    /// Distinct users required in the current window; a single user cannot
    /// produce cross-user leakage.
    pub min_window_users: u64,
    /// Monitor window length in simulated milliseconds.
    pub epoch_interval_ms: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            entropy_jump: 0.3,
            u_pre_max: 1,
            min_window_users: 2,
            epoch_interval_ms: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnomalyAction {
    DowngradeToPrivate,
    Restrict,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub node: NodeId,
    pub entropy_now: f64,
    pub entropy_prev: f64,
    pub u_pre: u64,
    pub action: AnomalyAction,
    pub epoch: u64,
}

/// Record a successful (visible) hit of `node` by `user`.
pub fn record_access(index: &CacheIndex, node: NodeId, user: UserId) {
    index.record_access(node, user);
}

pub fn roll_window(index: &CacheIndex, node: NodeId) {
    if let Some(n) = index.node(node) {
        n.stats.roll();
    }
}

/// The suspicion predicate on a snapshot. A block still in its creation
/// window has no history to compare against and is never suspicious.
pub fn is_suspicious(s: &AccessSnapshot, cfg: &MonitorConfig) -> bool {
    if s.windows_closed == 0 {
        return false;
    }
    let now = entropy_of(s.hit_cur, s.u_cnt);
    let prev = entropy_of(s.hit_pre, s.u_pre);
    now - prev >= cfg.entropy_jump && s.u_pre <= cfg.u_pre_max && s.u_cnt >= cfg.min_window_users
}

/// Evaluate one shared block and apply the mitigation if it looks suspicious.
/// Non-public blocks are never acted upon.
pub fn check_anomaly(
    index: &mut CacheIndex,
    node: NodeId,
    cfg: &MonitorConfig,
    epoch: u64,
) -> AnomalyEvent {
    let Some(n) = index.node(node) else {
        return AnomalyEvent {
            node,
            entropy_now: 0.0,
            entropy_prev: 0.0,
            u_pre: 0,
            action: AnomalyAction::None,
            epoch,
        };
    };
    let s = n.stats.snapshot();
    let label = n.label();
    let owner = n.owner_class();
    let mut ev = AnomalyEvent {
        node,
        entropy_now: entropy_of(s.hit_cur, s.u_cnt),
        entropy_prev: entropy_of(s.hit_pre, s.u_pre),
        u_pre: s.u_pre,
        action: AnomalyAction::None,
        epoch,
    };
    if label != SensitivityLabel::Public || !is_suspicious(&s, cfg) {
        return ev;
    }
    match owner {
        OwnerClass::Customer => {
            index
                .set_label(node, SensitivityLabel::Private, true)
                .expect("downgrade from Public is always legal");
            ev.action = AnomalyAction::DowngradeToPrivate;
        }
        OwnerClass::Business => {
            index
                .set_label(node, SensitivityLabel::Restricted, true)
                .expect("restrict from Public is always legal");
            index.flag_alert(node);
            ev.action = AnomalyAction::Restrict;
        }
    }
    ev
}

/// Periodic monitor task: checks every recently accessed shared block, then
/// rolls windows. Returns the non-trivial events.
#[derive(Debug, Default)]
pub struct Monitor {
    pub config: MonitorConfig,
    alerts: Vec<AnomalyEvent>,
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Self {
        Self {
            config,
            alerts: Vec::new(),
        }
    }

    pub fn on_epoch(&mut self, index: &mut CacheIndex, epoch: u64) -> Vec<AnomalyEvent> {
        let active = index.take_active_nodes();
        let mut fired = Vec::new();
        if self.config.enabled {
            for &id in &active {
                let ev = check_anomaly(index, id, &self.config, epoch);
                if ev.action != AnomalyAction::None {
                    fired.push(ev);
                }
            }
        }
        for &id in &active {
            if let Some(n) = index.node(id) {
                n.stats.roll();
                if !n.stats.is_idle() {
                    index.mark_active(id);
                }
            }
        }
        self.alerts.extend(fired.iter().cloned());
        fired
    }

    /// Every anomaly that fired so far, in order.
    pub fn alerts(&self) -> &[AnomalyEvent] {
        &self.alerts
    }

    /// Append events as JSON lines.
    pub fn write_alerts<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ev in &self.alerts {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
