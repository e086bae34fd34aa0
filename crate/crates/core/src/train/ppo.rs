//! Clipped-surrogate policy optimization over a rollout buffer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::TrainError;
use crate::nn::{backward, AdamConfig, Tensor};
use crate::policy::Policy;

use super::{PpoConfig, RolloutBuffer};

/// Mean loss components over one update.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left the clip interval.
    pub clip_frac: f64,
    pub minibatches: usize,
}

/// Runs `n_epochs` of minibatch updates on the buffer:
/// `loss = -min(r·Â, clip(r)·Â) - β·H + c_v·(V_clip - R)²` with the value
/// clipped to `V_old ± clip_range_vf`, followed by a clipped Adam step.
///
/// Advantages must be computed (and normalized) beforehand.
pub fn ppo_update(
    buffer: &RolloutBuffer,
    policy: &mut Policy,
    cfg: &PpoConfig,
    update_idx: u64,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, TrainError> {
    assert!(!buffer.advantages.is_empty(), "compute_gae before ppo_update");
    let n = buffer.len();
    let adam = AdamConfig { lr: cfg.lr, max_grad_norm: cfg.max_grad_norm, ..AdamConfig::default() };
    let mut stats = UpdateStats::default();

    for _epoch in 0..cfg.n_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates on the shared stream keeps runs reproducible
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let obs: Vec<Vec<f64>> = chunk.iter().map(|&i| buffer.obs[i].clone()).collect();
            let actions: Vec<Vec<bool>> = chunk.iter().map(|&i| buffer.actions[i].clone()).collect();
            let old_logp = Tensor::from_vec(&[b], chunk.iter().map(|&i| buffer.log_probs[i]).collect());
            let adv = Tensor::from_vec(&[b], chunk.iter().map(|&i| buffer.advantages[i]).collect());
            let returns = Tensor::from_vec(&[b], chunk.iter().map(|&i| buffer.returns[i]).collect());
            let old_values = Tensor::from_vec(&[b], chunk.iter().map(|&i| buffer.values[i]).collect());

            let eval = policy.evaluate_actions(&obs, &actions, None)?;

            let ratio = eval.log_prob.sub(&old_logp)?.exp();
            let surr1 = ratio.mul(&adv)?;
            let surr2 = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps).mul(&adv)?;
            let policy_loss = surr1.minimum(&surr2)?.mean_all().neg();

            let v_clipped = eval
                .value
                .sub(&old_values)?
                .clamp(-cfg.clip_range_vf, cfg.clip_range_vf)
                .add(&old_values)?;
            let v_err = v_clipped.sub(&returns)?;
            let value_loss = v_err.mul(&v_err)?.mean_all();

            let entropy_mean = eval.entropy.mean_all();

            let loss = policy_loss
                .add(&value_loss.scale(cfg.value_coef))?
                .add(&entropy_mean.scale(-cfg.entropy_coef))?;

            let loss_v = loss.item();
            if !loss_v.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "loss".into(),
                    update: update_idx,
                    detail: format!(
                        "policy_loss={} value_loss={} entropy={}",
                        policy_loss.item(),
                        value_loss.item(),
                        entropy_mean.item()
                    ),
                });
            }

            let clip_hits = ratio
                .value()
                .iter()
                .filter(|&&r| (r - 1.0).abs() > cfg.clip_eps)
                .count();

            backward(&loss).map_err(TrainError::Nn)?;
            policy.params.adam_step(&adam)?;

            stats.policy_loss += policy_loss.item();
            stats.value_loss += value_loss.item();
            stats.entropy += entropy_mean.item();
            stats.clip_frac += clip_hits as f64 / b as f64;
            stats.minibatches += 1;
        }
    }
    if stats.minibatches > 0 {
        let m = stats.minibatches as f64;
        stats.policy_loss /= m;
        stats.value_loss /= m;
        stats.entropy /= m;
        stats.clip_frac /= m;
    }
    Ok(stats)
}
