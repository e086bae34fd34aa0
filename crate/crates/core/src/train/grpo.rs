//! Group-relative normalization layered on top of PPO rollouts.
//!
//! At each visited state, `group_size` candidate actions are drawn from the
//! behavior policy and scored by the one-step reward of applying them to a
//! cloned environment. The executed action is the first candidate (so the
//! behavior policy is untouched), and its within-group standardized score
//! `tanh((r - mean) / (std + ε))` is blended into its advantage with weight
//! `beta_g`. Returns and GAE always use the original rewards; the PPO
//! surrogate is unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::TrainError;
use crate::policy::Policy;
use crate::reward::{MultiplierState, RewardConfig};

use super::buffer::{collect_impl, EnvPool, GrpoSampling};
use super::{GrpoConfig, RolloutBuffer};

/// Bounded within-group standardization: `tanh((r - mean) / (σ + eps))`.
/// All outputs lie in (-1, 1); equal rewards map to 0; positive affine
/// reward transforms leave the scores unchanged up to ε effects.
pub fn grpo_normalize(rewards: &[f64], eps: f64) -> Vec<f64> {
    let k = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / k;
    let sigma = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / k).sqrt();
    rewards.iter().map(|r| ((r - mean) / (sigma + eps)).tanh()).collect()
}

/// Rollout collection with candidate scoring. Candidate draws use a
/// dedicated generator derived from `candidate_seed`, so with `beta_g = 0`
/// the produced buffer is bit-identical to plain [`super::collect_rollouts`]
/// under the same main generator.
pub fn collect_rollouts_grpo(
    pool: &mut EnvPool,
    policy: &mut Policy,
    n_steps: usize,
    rcfg: &RewardConfig,
    mult: &mut MultiplierState,
    rng: &mut ChaCha8Rng,
    grpo: &GrpoConfig,
    candidate_seed: u64,
) -> Result<RolloutBuffer, TrainError> {
    let sampling = GrpoSampling { cfg: grpo, rng: ChaCha8Rng::seed_from_u64(candidate_seed) };
    collect_impl(pool, policy, n_steps, rcfg, mult, rng, Some(sampling))
}

/// Blends the stored normalized scores into the advantages:
/// `Â' = Â + beta_g · r̃`. Call between [`super::compute_gae`] and
/// normalization.
pub fn blend_grpo_scores(buffer: &mut RolloutBuffer, beta_g: f64) {
    if beta_g == 0.0 {
        return;
    }
    for (a, s) in buffer.advantages.iter_mut().zip(&buffer.grpo_scores) {
        *a += beta_g * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_rewards_standardize_to_zero() {
        let scores = grpo_normalize(&[2.5; 8], 1e-8);
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn two_point_group_hand_values() {
        // rewards [0, 10]: mean 5, sigma 5 -> scores ±tanh(5/(5+ε)) ≈ ±tanh(1)
        let scores = grpo_normalize(&[0.0, 10.0], 1e-8);
        let expect = (5.0f64 / (5.0 + 1e-8)).tanh();
        assert!((scores[0] + expect).abs() < 1e-12);
        assert!((scores[1] - expect).abs() < 1e-12);
        assert!((expect - 0.7616).abs() < 1e-4);
    }

    #[test]
    fn scores_bounded_in_open_unit_interval() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.random_range(2..12usize);
            let rewards: Vec<f64> = (0..k).map(|_| rng.random_range(-1e3..1e3)).collect();
            for s in grpo_normalize(&rewards, 1e-8) {
                assert!(s > -1.0 && s < 1.0);
            }
        }
    }

    #[test]
    fn positive_affine_invariance() {
        use rand::{Rng, SeedableRng};
        // ε is additive in the denominator, so invariance is exact only up
        // to ε/σ effects; spreads well above ε keep it within 1e-9
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let k = rng.random_range(2..10usize);
            let rewards: Vec<f64> = (0..k).map(|_| rng.random_range(-500.0..500.0)).collect();
            let a = rng.random_range(0.5..10.0);
            let b = rng.random_range(-50.0..50.0);
            let transformed: Vec<f64> = rewards.iter().map(|r| a * r + b).collect();
            let s1 = grpo_normalize(&rewards, 1e-8);
            let s2 = grpo_normalize(&transformed, 1e-8);
            for (x, y) in s1.iter().zip(&s2) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn blend_adds_scaled_scores() {
        let mut buffer = RolloutBuffer {
            advantages: vec![1.0, -0.5],
            grpo_scores: vec![0.3, -0.7],
            ..RolloutBuffer::default()
        };
        blend_grpo_scores(&mut buffer, 2.0);
        assert!((buffer.advantages[0] - 1.6).abs() < 1e-15);
        assert!((buffer.advantages[1] + 1.9).abs() < 1e-15);
    }
}
