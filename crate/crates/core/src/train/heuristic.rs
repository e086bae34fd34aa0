//! Non-learning baselines: instant matching and constant-interval batching.

use serde::{Deserialize, Serialize};

use crate::env::Action;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeuristicKind {
    /// Match every zone every epoch.
    Instant,
    /// Match every zone once per fixed window, hold otherwise.
    Interval { window_s: f64 },
}

/// Stateful baseline policy; rng-free, so evaluation is fully determined by
/// the environment seed.
#[derive(Debug, Clone)]
pub struct HeuristicPolicy {
    kind: HeuristicKind,
    last_window: i64,
}

impl HeuristicPolicy {
    pub fn new(kind: HeuristicKind) -> Self {
        HeuristicPolicy { kind, last_window: -1 }
    }

    pub fn action(&mut self, clock_h: f64, n_zones: usize) -> Action {
        match self.kind {
            HeuristicKind::Instant => Action::ones(n_zones),
            HeuristicKind::Interval { window_s } => {
                let idx = (clock_h * 3600.0 / window_s).floor() as i64;
                if idx > self.last_window {
                    self.last_window = idx;
                    Action::ones(n_zones)
                } else {
                    Action::zeros(n_zones)
                }
            }
        }
    }
}
