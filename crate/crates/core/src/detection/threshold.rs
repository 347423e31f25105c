use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlertLevel {
    Normal,
    Elevated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdParams {
    pub base: f64,
    pub k_load: f64,
    pub k_alert: f64,
    pub t_min: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            base: 0.5,
            k_load: 0.05,
            k_alert: 0.02,
            t_min: 0.1,
        }
    }
}

/// Tier-2 escalation threshold. Blocks scoring below `current_threshold`
/// go on to Tier-3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub base_threshold: f64,
    pub current_threshold: f64,
    pub load_factor: f64,
    pub alert_level: AlertLevel,
}

impl ThresholdState {
    pub fn new(base: f64) -> Self {
        Self {
            base_threshold: base,
            current_threshold: base,
            load_factor: 0.0,
            alert_level: AlertLevel::Normal,
        }
    }
}

/// `clamp(base - k_load * max(0, load - 1) - k_alert * alerts, t_min, base)`.
pub fn adjust_threshold(
    state: ThresholdState,
    params: &ThresholdParams,
    load: f64,
    recent_alerts: u32,
) -> ThresholdState {
    let base = state.base_threshold;
    let raw = base - params.k_load * (load - 1.0).max(0.0) - params.k_alert * recent_alerts as f64;
    ThresholdState {
        base_threshold: base,
        current_threshold: raw.clamp(params.t_min.min(base), base),
        load_factor: load.max(0.0),
        alert_level: if recent_alerts > 0 {
            AlertLevel::Elevated
        } else {
            AlertLevel::Normal
        },
    }
}
