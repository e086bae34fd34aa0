//! Rollout collection, advantage estimation, PPO/GRPO updates, heuristic
//! baselines, evaluation, and the training loop.

mod buffer;
mod eval;
mod grpo;
mod heuristic;
mod ppo;
mod run;

pub use buffer::{collect_rollouts, compute_gae, EnvPool, RolloutBuffer};
pub use eval::{evaluate_policy, EvalReport, PolicySource, ScenarioBundle};
pub use grpo::{collect_rollouts_grpo, grpo_normalize};
pub use heuristic::{HeuristicKind, HeuristicPolicy};
pub use ppo::{ppo_update, UpdateStats};
pub use run::{train_loop, MetricsRow, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

/// PPO hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Environment steps gathered per update (across all parallel envs).
    pub n_steps: usize,
    pub n_epochs: usize,
    pub clip_eps: f64,
    pub clip_range_vf: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lr: 2e-4,
            batch_size: 512,
            n_steps: 2048,
            n_epochs: 5,
            clip_eps: 0.2,
            clip_range_vf: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.7,
            gae_lambda: 0.95,
            gamma: 0.99,
            max_grad_norm: 0.4,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(format!("clip_eps must be in (0,1), got {}", self.clip_eps));
        }
        for (name, v) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{name} must be in (0,1], got {v}"));
            }
        }
        if self.batch_size == 0 || self.n_steps == 0 || self.n_epochs == 0 {
            return Err("batch_size, n_steps and n_epochs must be positive".into());
        }
        Ok(())
    }
}

/// Group-relative normalization settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    /// Candidate actions sampled per state (≥ 2).
    pub group_size: usize,
    pub eps: f64,
    /// Weight of the normalized score blended into the executed action's
    /// advantage; 0 reproduces plain PPO exactly.
    pub beta_g: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig { group_size: 8, eps: 1e-8, beta_g: 1.0 }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.group_size < 2 {
            return Err(format!("group_size must be ≥ 2, got {}", self.group_size));
        }
        if self.eps <= 0.0 {
            return Err("eps must be > 0".into());
        }
        Ok(())
    }
}
