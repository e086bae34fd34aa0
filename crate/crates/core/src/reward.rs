//! Instantaneous reward around incremental wait costs, with a
//! congestion-modulated pickup weight and an online adaptive constraint
//! multiplier.
//!
//! The scalar reward is
//! `r = -(c_m · ΔW_match + c_p(t) · ΔW_pickup) - λ · (g - α)`
//! where `g` is the trailing fraction of requests whose matching or pickup
//! wait exceeded the lateness threshold, and the multiplier follows
//! `λ ← [λ + ξ (g - α)]₊`, so penalties grow while violations exceed the
//! tolerance and relax otherwise. Since `g ∈ [0, 1]`, each multiplier step
//! is bounded by ξ.

use serde::{Deserialize, Serialize};

/// Weights, tolerances and windows of the reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Matching-wait weight (1/h).
    pub c_m: f64,
    /// Pickup-wait base weight (1/h).
    pub c_p_base: f64,
    /// Violation tolerance α.
    pub alpha: f64,
    /// Multiplier step size ξ.
    pub xi: f64,
    /// A match or pickup wait beyond this is "late" (seconds).
    pub late_threshold_s: f64,
    /// Trailing epochs over which the violation fraction g is measured.
    pub violation_window: usize,
    /// Clamp bounds on the congestion modulation factor.
    pub cp_clip: (f64, f64),
    /// Reference speed for congestion modulation (km/h).
    pub v_ref_kmh: f64,
    /// When false, c_p(t) stays at c_p_base (fixed-ratio mode).
    pub modulate_cp: bool,
    /// When false, the multiplier is frozen at 0 (fixed-ratio mode).
    pub adaptive: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            c_m: 1.0,
            c_p_base: 1.0,
            alpha: 0.05,
            xi: 0.05,
            late_threshold_s: 600.0,
            violation_window: 360,
            cp_clip: (0.5, 2.0),
            v_ref_kmh: 50.0,
            modulate_cp: true,
            adaptive: true,
        }
    }
}

impl RewardConfig {
    /// Fixed weights c_m:c_p with the multiplier frozen at zero, as used by
    /// the reward-hacking ratio experiments.
    pub fn fixed_ratio(c_m: f64, c_p: f64) -> Self {
        RewardConfig {
            c_m,
            c_p_base: c_p,
            modulate_cp: false,
            adaptive: false,
            ..RewardConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!("alpha must be in (0,1), got {}", self.alpha));
        }
        if self.xi <= 0.0 {
            return Err(format!("xi must be > 0, got {}", self.xi));
        }
        if !(self.cp_clip.0 <= 1.0 && 1.0 <= self.cp_clip.1) {
            return Err(format!("cp_clip must bracket 1.0, got {:?}", self.cp_clip));
        }
        if self.c_m < 0.0 || self.c_p_base < 0.0 {
            return Err("weights must be ≥ 0".into());
        }
        Ok(())
    }
}

/// Current adaptive multiplier λ ≥ 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MultiplierState {
    pub lambda: f64,
}

impl Default for MultiplierState {
    fn default() -> Self {
        MultiplierState { lambda: 0.0 }
    }
}

/// All components of one epoch's reward, recomposing to `r` exactly.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// ΔW_match (hours).
    pub d_match: f64,
    /// ΔW_pickup (hours).
    pub d_pickup: f64,
    /// Effective pickup weight c_p(t).
    pub cp_t: f64,
    /// Violation fraction in the trailing window.
    pub g: f64,
    /// Multiplier used for this epoch.
    pub lambda: f64,
    /// Scalar reward.
    pub r: f64,
}

/// Marginal wait increases for one epoch: matching wait accrues `epoch_dt`
/// for every request held through the epoch; pickup wait is the sum of new
/// assignments' pickup durations (all in hours).
pub fn incremental_waits(held_requests: usize, epoch_dt_h: f64, pickup_durations_h: &[f64]) -> (f64, f64) {
    let d_match = held_requests as f64 * epoch_dt_h;
    let d_pickup = pickup_durations_h.iter().sum();
    (d_match, d_pickup)
}

/// Congestion-modulated pickup weight: lower mean speed (heavier congestion)
/// raises the pickup penalty, clamped to `clip`.
pub fn congestion_weight(c_p_base: f64, mean_speed_kmh: f64, v_ref_kmh: f64, clip: (f64, f64)) -> f64 {
    c_p_base * (v_ref_kmh / mean_speed_kmh).clamp(clip.0, clip.1)
}

/// Fraction of requests in the window whose matching OR pickup wait was
/// late. An empty window gives 0.
pub fn violation_fraction(late: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        late as f64 / total as f64
    }
}

/// Assembles the epoch reward from its parts.
pub fn compute_reward(
    d_match: f64,
    d_pickup: f64,
    mean_speed_kmh: f64,
    g: f64,
    mult: &MultiplierState,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let cp_t = if cfg.modulate_cp {
        congestion_weight(cfg.c_p_base, mean_speed_kmh, cfg.v_ref_kmh, cfg.cp_clip)
    } else {
        cfg.c_p_base
    };
    let lambda = if cfg.adaptive { mult.lambda } else { 0.0 };
    let r = -(cfg.c_m * d_match + cp_t * d_pickup) - lambda * (g - cfg.alpha);
    RewardBreakdown { d_match, d_pickup, cp_t, g, lambda, r }
}

/// Projected multiplier update `λ' = max(0, λ + ξ (g - α))`.
/// The increment is bounded: `|λ' - λ| ≤ ξ` because `g ∈ [0, 1]`.
pub fn update_multiplier(mult: &MultiplierState, g: f64, cfg: &RewardConfig) -> MultiplierState {
    if !cfg.adaptive {
        return *mult;
    }
    MultiplierState { lambda: (mult.lambda + cfg.xi * (g - cfg.alpha)).max(0.0) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn waits_empty_epoch() {
        assert_eq!(incremental_waits(0, 10.0 / 3600.0, &[]), (0.0, 0.0));
    }

    #[test]
    fn three_held_requests_over_ten_seconds() {
        let (dm, dp) = incremental_waits(3, 10.0 / 3600.0, &[]);
        assert!((dm - 30.0 / 3600.0).abs() < 1e-15);
        assert_eq!(dp, 0.0);
    }

    #[test]
    fn pickup_sum() {
        let (_, dp) = incremental_waits(0, 1.0, &[120.0 / 3600.0, 240.0 / 3600.0]);
        assert!((dp - 0.1).abs() < 1e-15);
    }

    #[test]
    fn congestion_weight_neutral_and_clamped() {
        assert_eq!(congestion_weight(1.0, 30.0, 30.0, (0.5, 2.0)), 1.0);
        assert_eq!(congestion_weight(1.0, 15.0, 30.0, (0.5, 2.0)), 2.0);
        assert_eq!(congestion_weight(1.0, 300.0, 30.0, (0.5, 2.0)), 0.5);
    }

    #[test]
    fn violation_fraction_cases() {
        assert_eq!(violation_fraction(0, 20), 0.0);
        assert_eq!(violation_fraction(1, 20), 0.05);
        assert_eq!(violation_fraction(0, 0), 0.0);
    }

    #[test]
    fn reward_zero_when_all_terms_vanish() {
        let cfg = RewardConfig::default();
        let b = compute_reward(0.0, 0.0, cfg.v_ref_kmh, cfg.alpha, &MultiplierState::default(), &cfg);
        assert_eq!(b.r, 0.0);
    }

    #[test]
    fn reward_arithmetic() {
        let cfg = RewardConfig { modulate_cp: false, ..RewardConfig::default() };
        let b = compute_reward(0.01, 0.02, 50.0, cfg.alpha, &MultiplierState { lambda: 0.0 }, &cfg);
        assert!((b.r + 0.03).abs() < 1e-15);
    }

    #[test]
    fn penalty_term_only() {
        let cfg = RewardConfig { modulate_cp: false, ..RewardConfig::default() };
        let b = compute_reward(0.0, 0.0, 50.0, 0.10, &MultiplierState { lambda: 2.0 }, &cfg);
        assert!((b.r + 0.1).abs() < 1e-15);
    }

    #[test]
    fn breakdown_recomposes_exactly() {
        let cfg = RewardConfig::default();
        let b = compute_reward(0.013, 0.027, 21.5, 0.08, &MultiplierState { lambda: 0.7 }, &cfg);
        let recomposed = -(cfg.c_m * b.d_match + b.cp_t * b.d_pickup) - b.lambda * (b.g - cfg.alpha);
        assert_eq!(b.r, recomposed);
    }

    #[test]
    fn multiplier_fixed_point_and_projection() {
        let cfg = RewardConfig::default();
        let m = MultiplierState { lambda: 0.3 };
        assert_eq!(update_multiplier(&m, cfg.alpha, &cfg).lambda, 0.3);
        let zero = MultiplierState { lambda: 0.0 };
        assert_eq!(update_multiplier(&zero, 0.0, &cfg).lambda, 0.0);
    }

    #[test]
    fn multiplier_arithmetic() {
        let cfg = RewardConfig { xi: 0.1, alpha: 0.05, ..RewardConfig::default() };
        let m = update_multiplier(&MultiplierState { lambda: 1.0 }, 0.15, &cfg);
        assert!((m.lambda - 1.01).abs() < 1e-15);
    }

    #[test]
    fn increment_bounded_by_xi() {
        let cfg = RewardConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut m = MultiplierState { lambda: 0.0 };
        for _ in 0..100_000 {
            let g: f64 = rng.random_range(0.0..=1.0);
            let next = update_multiplier(&m, g, &cfg);
            assert!((next.lambda - m.lambda).abs() <= cfg.xi + 1e-15);
            assert!(next.lambda >= 0.0);
            m = next;
        }
    }

    #[test]
    fn drift_sign_matches_mean_violation() {
        let cfg = RewardConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // g stream with mean above alpha -> lambda non-decreasing in expectation
        let mut m = MultiplierState { lambda: 1.0 };
        let start = m.lambda;
        for _ in 0..2000 {
            let g = 0.2 + rng.random_range(-0.01..0.01);
            m = update_multiplier(&m, g, &cfg);
        }
        assert!(m.lambda > start);
        // and below alpha -> decreasing toward the projection at zero
        let mut m2 = MultiplierState { lambda: 1.0 };
        for _ in 0..2000 {
            let g = 0.01 + rng.random_range(-0.005..0.005);
            m2 = update_multiplier(&m2, g, &cfg);
        }
        assert!(m2.lambda < 1.0);
    }

    /// Stylized decreasing violation process: the violation rate falls as
    /// the multiplier grows, so the trajectory settles around the level
    /// where the drift changes sign.
    #[test]
    fn multiplier_stabilizes_on_decreasing_process() {
        let cfg = RewardConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = MultiplierState { lambda: 0.0 };
        let mut trace = Vec::with_capacity(20_000);
        for _ in 0..20_000 {
            let mean_g = (0.30 - 0.10 * m.lambda).clamp(0.0, 1.0);
            let g = (mean_g + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
            m = update_multiplier(&m, g, &cfg);
            trace.push(m.lambda);
        }
        let tail = &trace[trace.len() * 4 / 5..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / tail.len() as f64;
        assert!(mean > 0.0);
        assert!(var.sqrt() < 0.10 * mean, "std {} vs mean {}", var.sqrt(), mean);
    }
}
