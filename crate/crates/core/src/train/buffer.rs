//! Rollout storage, vectorized collection, and generalized advantage
//! estimation.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::env::{Action, ScenarioConfig, SimEnv, TravelTimes};
use crate::error::TrainError;
use crate::policy::Policy;
use crate::reward::{self, MultiplierState, RewardConfig};

/// A fixed set of environments stepped in index order; finished episodes
/// reset with sequentially drawn seeds so runs are reproducible.
pub struct EnvPool {
    cfg: Arc<ScenarioConfig>,
    times: Arc<dyn TravelTimes + Send + Sync>,
    pub envs: Vec<SimEnv>,
    next_seed: u64,
}

impl EnvPool {
    pub fn new(
        cfg: Arc<ScenarioConfig>,
        times: Arc<dyn TravelTimes + Send + Sync>,
        n_envs: usize,
        seed_base: u64,
    ) -> Result<Self, TrainError> {
        let mut envs = Vec::with_capacity(n_envs);
        for i in 0..n_envs {
            envs.push(SimEnv::new(cfg.clone(), times.clone(), seed_base + i as u64)?);
        }
        Ok(EnvPool { cfg, times, envs, next_seed: seed_base + n_envs as u64 })
    }

    pub fn reset_env(&mut self, i: usize) -> Result<(), TrainError> {
        self.envs[i] = SimEnv::new(self.cfg.clone(), self.times.clone(), self.next_seed)?;
        self.next_seed += 1;
        Ok(())
    }

    pub fn next_seed(&self) -> u64 {
        self.next_seed
    }
}

/// On-policy transitions plus derived advantages and returns.
///
/// Transitions are stored contiguously per environment segment (env-index
/// order), each segment carrying its own bootstrap value, so advantage
/// computation never crosses episode or environment boundaries.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<bool>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// (start, len, bootstrap value) per contiguous segment.
    pub segments: Vec<(usize, usize, f64)>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// GRPO normalized score of the executed action (zero when unused).
    pub grpo_scores: Vec<f64>,
    // rollout-level metrics
    pub match_waits_h: Vec<f64>,
    pub pickup_waits_h: Vec<f64>,
    pub last_g: f64,
    pub last_lambda: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
        }
    }

    /// Normalizes advantages to zero mean and unit standard deviation.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n == 0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        for a in &mut self.advantages {
            *a = (*a - mean) / (std + 1e-8);
        }
    }
}

/// Per-environment accumulation during collection, flattened env-major at
/// the end.
#[derive(Default)]
struct Segmented {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<bool>>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    grpo_scores: Vec<f64>,
    /// (len, bootstrap) per closed segment, in order.
    closed: Vec<(usize, f64)>,
    open_len: usize,
}

impl Segmented {
    fn close(&mut self, bootstrap: f64) {
        if self.open_len > 0 {
            self.closed.push((self.open_len, bootstrap));
            self.open_len = 0;
        }
    }
}

/// Gathers `n_steps` transitions across the pool (stepped in env-index
/// order), sampling from the policy and updating the multiplier online
/// after every transition.
pub fn collect_rollouts(
    pool: &mut EnvPool,
    policy: &mut Policy,
    n_steps: usize,
    rcfg: &RewardConfig,
    mult: &mut MultiplierState,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBuffer, TrainError> {
    collect_impl(pool, policy, n_steps, rcfg, mult, rng, None)
}

pub(super) struct GrpoSampling<'a> {
    pub cfg: &'a super::GrpoConfig,
    pub rng: ChaCha8Rng,
}

/// Shared collection path; `grpo` adds candidate-action scoring on cloned
/// environments (see [`super::collect_rollouts_grpo`]).
pub(super) fn collect_impl(
    pool: &mut EnvPool,
    policy: &mut Policy,
    n_steps: usize,
    rcfg: &RewardConfig,
    mult: &mut MultiplierState,
    rng: &mut ChaCha8Rng,
    mut grpo: Option<GrpoSampling>,
) -> Result<RolloutBuffer, TrainError> {
    let n_envs = pool.envs.len();
    assert!(n_envs > 0, "empty env pool");
    let steps_per_env = n_steps.div_ceil(n_envs);
    let mut segs: Vec<Segmented> = (0..n_envs).map(|_| Segmented::default()).collect();
    let mut buffer = RolloutBuffer::default();

    for _ in 0..steps_per_env {
        for i in 0..n_envs {
            let obs = pool.envs[i].observe();
            let (bits, logp, value) = policy.act(&obs, rng, None, true)?;
            let action = Action::from_slice(&bits);

            // GRPO: score K candidates (the executed action first) by their
            // one-step reward on cloned environments
            let mut score = 0.0;
            if let Some(g) = grpo.as_mut() {
                let mut cand_rewards = Vec::with_capacity(g.cfg.group_size);
                let mut clone0 = pool.envs[i].clone();
                cand_rewards.push(clone0.step(&action, rcfg, mult)?.breakdown.r);
                for _ in 1..g.cfg.group_size {
                    let (cbits, _, _) = policy.act(&obs, &mut g.rng, None, false)?;
                    let mut c = pool.envs[i].clone();
                    cand_rewards.push(c.step(&Action::from_slice(&cbits), rcfg, mult)?.breakdown.r);
                }
                score = grpo_scores_of(&cand_rewards, g.cfg.eps)[0];
            }

            let out = pool.envs[i].step(&action, rcfg, mult)?;
            *mult = reward::update_multiplier(mult, out.breakdown.g, rcfg);
            buffer.last_g = out.breakdown.g;
            buffer.last_lambda = mult.lambda;
            buffer.match_waits_h.extend(&out.match_waits_h);
            buffer.pickup_waits_h.extend(&out.pickup_waits_h);

            let seg = &mut segs[i];
            seg.obs.push(obs);
            seg.actions.push(bits);
            seg.log_probs.push(logp);
            seg.rewards.push(out.breakdown.r);
            seg.values.push(value);
            seg.dones.push(out.done);
            seg.grpo_scores.push(score);
            seg.open_len += 1;

            if out.done {
                seg.close(0.0); // terminal: no bootstrap
                pool.reset_env(i)?;
            }
        }
    }

    // bootstrap open segments with the value of the current state
    for i in 0..n_envs {
        if segs[i].open_len > 0 {
            let obs = pool.envs[i].observe();
            let v = policy.value_of(&obs)?;
            segs[i].close(v);
        }
    }

    // flatten env-major
    for seg in segs {
        let mut start = buffer.obs.len();
        buffer.obs.extend(seg.obs);
        buffer.actions.extend(seg.actions);
        buffer.log_probs.extend(seg.log_probs);
        buffer.rewards.extend(seg.rewards);
        buffer.values.extend(seg.values);
        buffer.dones.extend(seg.dones);
        buffer.grpo_scores.extend(seg.grpo_scores);
        for (len, bootstrap) in seg.closed {
            buffer.segments.push((start, len, bootstrap));
            start += len;
        }
    }
    Ok(buffer)
}

pub(super) fn grpo_scores_of(rewards: &[f64], eps: f64) -> Vec<f64> {
    super::grpo_normalize(rewards, eps)
}

/// GAE over every segment:
/// `δ_t = r_t + γ·V(s_{t+1})·(1 - done_t) - V(s_t)`,
/// `Â_t = Σ_k (γλ)^k δ_{t+k}` with resets at episode boundaries, and
/// `R_t = Â_t + V(s_t)`.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, gae_lambda: f64) {
    let n = buffer.len();
    buffer.advantages = vec![0.0; n];
    buffer.returns = vec![0.0; n];
    for &(start, len, bootstrap) in &buffer.segments {
        let mut gae = 0.0;
        for t in (start..start + len).rev() {
            let next_value = if t + 1 < start + len { buffer.values[t + 1] } else { bootstrap };
            let not_done = if buffer.dones[t] { 0.0 } else { 1.0 };
            let delta = buffer.rewards[t] + gamma * next_value * not_done - buffer.values[t];
            gae = delta + gamma * gae_lambda * not_done * gae;
            buffer.advantages[t] = gae;
            buffer.returns[t] = gae + buffer.values[t];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buffer_from(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64) -> RolloutBuffer {
        RolloutBuffer {
            rewards: rewards.to_vec(),
            values: values.to_vec(),
            dones: dones.to_vec(),
            obs: vec![vec![]; rewards.len()],
            actions: vec![vec![]; rewards.len()],
            log_probs: vec![0.0; rewards.len()],
            segments: vec![(0, rewards.len(), bootstrap)],
            grpo_scores: vec![0.0; rewards.len()],
            ..RolloutBuffer::default()
        }
    }

    #[test]
    fn undiscounted_returns_are_suffix_sums() {
        let mut b = buffer_from(&[1.0, 1.0, 1.0], &[0.0; 3], &[false, false, true], 0.0);
        compute_gae(&mut b, 1.0, 1.0);
        assert_eq!(b.returns, vec![3.0, 2.0, 1.0]);
        assert_eq!(b.advantages, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let rewards = [0.5, -0.25, 2.0, 0.1];
        let values = [0.3, 0.9, -0.2, 0.4];
        let dones = [false, false, false, false];
        let bootstrap = 0.7;
        let mut b = buffer_from(&rewards, &values, &dones, bootstrap);
        compute_gae(&mut b, 0.99, 0.0);
        for t in 0..4 {
            let next = if t + 1 < 4 { values[t + 1] } else { bootstrap };
            let delta = rewards[t] + 0.99 * next - values[t];
            assert!((b.advantages[t] - delta).abs() < 1e-15, "t={t}");
        }
    }

    /// Naive O(T²) oracle: Â_t = Σ_k (γλ)^k δ_{t+k}, truncated at episode
    /// boundaries.
    fn gae_oracle(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lam: f64) -> Vec<f64> {
        let t_max = rewards.len();
        let delta = |t: usize| -> f64 {
            let next = if dones[t] {
                0.0
            } else if t + 1 < t_max {
                values[t + 1]
            } else {
                bootstrap
            };
            rewards[t] + gamma * next - values[t]
        };
        let mut adv = vec![0.0; t_max];
        for t in 0..t_max {
            let mut acc = 0.0;
            let mut w = 1.0;
            for k in t..t_max {
                acc += w * delta(k);
                if dones[k] {
                    break;
                }
                w *= gamma * lam;
            }
            adv[t] = acc;
        }
        adv
    }

    #[test]
    fn gae_matches_naive_oracle_on_random_buffers() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _case in 0..100 {
            let t = rng.random_range(5..50usize);
            let rewards: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
            let values: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut dones: Vec<bool> = (0..t).map(|_| rng.random_range(0.0..1.0) < 0.1).collect();
            let bootstrap = rng.random_range(-1.0..1.0);
            dones[t - 1] = rng.random_range(0.0..1.0) < 0.5;
            let gamma = rng.random_range(0.9..1.0);
            let lam = rng.random_range(0.8..1.0);

            let mut b = buffer_from(&rewards, &values, &dones, bootstrap);
            compute_gae(&mut b, gamma, lam);
            let oracle = gae_oracle(&rewards, &values, &dones, bootstrap, gamma, lam);
            for t in 0..rewards.len() {
                assert!(
                    (b.advantages[t] - oracle[t]).abs() < 1e-12,
                    "t={t}: {} vs {}",
                    b.advantages[t],
                    oracle[t]
                );
                assert!((b.returns[t] - (oracle[t] + values[t])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalization_gives_zero_mean_unit_std() {
        let mut b = buffer_from(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4], &[false; 4], 0.0);
        compute_gae(&mut b, 1.0, 1.0);
        b.normalize_advantages();
        let mean: f64 = b.advantages.iter().sum::<f64>() / 4.0;
        let var: f64 = b.advantages.iter().map(|a| a * a).sum::<f64>() / 4.0 - mean * mean;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
