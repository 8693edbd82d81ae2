use serde::{Deserialize, Serialize};

use crate::time::SimDuration;

pub const DEFAULT_HALF_LIFE: SimDuration = SimDuration(24 * 3600);
pub const DEFAULT_PRIORITY_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorityConfig {
    pub half_life: SimDuration,
    pub floor: f64,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        PriorityConfig {
            half_life: DEFAULT_HALF_LIFE,
            floor: DEFAULT_PRIORITY_FLOOR,
        }
    }
}

/// Per-user accounting. Lower effective priority means better service.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user: String,
    /// Accumulated usage in core-seconds; kept integral so totals add up exactly.
    pub usage_core_seconds: u64,
    pub gpu_seconds: u64,
    pub real_priority: f64,
    pub priority_factor: f64,
    pub half_life: SimDuration,
    pub floor: f64,
}

impl UserRecord {
    pub fn new(user: impl Into<String>, priority_factor: f64, config: PriorityConfig) -> Self {
        UserRecord {
            user: user.into(),
            usage_core_seconds: 0,
            gpu_seconds: 0,
            real_priority: config.floor,
            priority_factor,
            half_life: config.half_life,
            floor: config.floor,
        }
    }

    pub fn effective_priority(&self) -> f64 {
        self.real_priority * self.priority_factor
    }

    /// Accumulated usage in core-hours.
    pub fn accumulated_usage(&self) -> f64 {
        self.usage_core_seconds as f64 / 3600.0
    }
}

/// Moves the real priority toward `current_usage` (cores in use) with the
/// record's half-life, never dropping below the floor.
pub fn decay_user_priority(record: &UserRecord, current_usage: f64, dt: SimDuration) -> UserRecord {
    let mut out = record.clone();
    let hl = record.half_life.as_secs();
    let factor = if hl == 0 {
        0.0
    } else {
        0.5f64.powf(dt.as_secs() as f64 / hl as f64)
    };
    let p = current_usage + (record.real_priority - current_usage) * factor;
    out.real_priority = p.max(record.floor);
    out
}
