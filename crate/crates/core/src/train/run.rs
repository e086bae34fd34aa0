//! The outer training loop: collect, estimate advantages, update, balance,
//! checkpoint, evaluate, and log metrics.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::policy::{EncoderConfig, Policy};
use crate::reward::MultiplierState;

use super::buffer::{collect_rollouts, compute_gae, EnvPool};
use super::eval::{evaluate_policy, EvalReport, PolicySource, ScenarioBundle};
use super::grpo::{blend_grpo_scores, collect_rollouts_grpo};
use super::heuristic::HeuristicKind;
use super::ppo::ppo_update;
use super::{GrpoConfig, PpoConfig};

/// Loop-level settings (the optimization itself is in [`PpoConfig`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub n_envs: usize,
    /// Evaluate on held-out seeds every this many updates (0: final only).
    pub eval_every_updates: u32,
    pub eval_episodes: usize,
    pub eval_seed_base: u64,
    /// Write a checkpoint every this many updates (0: final only).
    pub checkpoint_every_updates: u32,
    pub resume_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 200_000,
            n_envs: 4,
            eval_every_updates: 0,
            eval_episodes: 5,
            eval_seed_base: 10_000,
            checkpoint_every_updates: 0,
            resume_from: None,
        }
    }
}

/// One line of the per-update metrics CSV.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub update: u64,
    pub steps: u64,
    pub mean_reward: f64,
    pub match_wait_s: f64,
    pub pickup_wait_s: f64,
    pub g: f64,
    pub lambda: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
}

pub const METRICS_HEADER: &str =
    "update,steps,mean_reward,match_wait_s,pickup_wait_s,g,lambda,policy_loss,value_loss,entropy,clip_frac";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainState {
    update: u64,
    steps: u64,
    lambda: f64,
    next_env_seed: u64,
    master_seed: u64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub updates: u64,
    pub steps: u64,
    pub lambda: f64,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub final_eval: Option<EvalReport>,
}

fn update_rng(master_seed: u64, update: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(
        master_seed ^ (update.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(stream),
    )
}

fn mean_s(waits_h: &[f64]) -> f64 {
    if waits_h.is_empty() {
        0.0
    } else {
        waits_h.iter().sum::<f64>() / waits_h.len() as f64 * 3600.0
    }
}

fn write_checkpoint(
    dir: &Path,
    update: u64,
    policy: &Policy,
    state: &TrainState,
) -> Result<PathBuf, TrainError> {
    let ckpt_dir = dir.join(format!("ckpt_{update:05}"));
    std::fs::create_dir_all(&ckpt_dir)?;
    policy.params.save(&ckpt_dir.join("params.bin"))?;
    let json = serde_json::to_string_pretty(state)
        .map_err(|e| TrainError::Checkpoint(format!("state serialization: {e}")))?;
    std::fs::write(ckpt_dir.join("state.json"), json)?;
    Ok(ckpt_dir)
}

fn read_checkpoint(dir: &Path, cfg: &EncoderConfig) -> Result<(Policy, TrainState), TrainError> {
    let params = crate::nn::ParameterSet::load(&dir.join("params.bin"))?;
    let policy = Policy::from_params(cfg.clone(), params)
        .map_err(|e| TrainError::Checkpoint(format!("incompatible checkpoint: {e}")))?;
    let text = std::fs::read_to_string(dir.join("state.json"))?;
    let state: TrainState =
        serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(format!("state parse: {e}")))?;
    Ok((policy, state))
}

/// Alternates rollout collection and PPO (or GRPO-blended) updates until
/// the step budget is exhausted. Emits numbered checkpoints, a per-update
/// metrics CSV, an evaluation history, and the hour-bucketed expert
/// utilization table.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    bundle: &ScenarioBundle,
    encoder: &EncoderConfig,
    ppo: &PpoConfig,
    grpo: Option<&GrpoConfig>,
    tcfg: &TrainConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<TrainOutcome, TrainError> {
    ppo.validate().map_err(TrainError::Checkpoint)?;
    if let Some(g) = grpo {
        g.validate().map_err(TrainError::Checkpoint)?;
    }
    std::fs::create_dir_all(out_dir)?;
    let ckpt_root = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_root)?;

    let (mut policy, mut state) = match &tcfg.resume_from {
        Some(dir) => read_checkpoint(dir, encoder)?,
        None => (
            Policy::new(encoder.clone(), master_seed).map_err(TrainError::Policy)?,
            TrainState { update: 0, steps: 0, lambda: 0.0, next_env_seed: master_seed, master_seed },
        ),
    };
    let mut mult = MultiplierState { lambda: state.lambda };
    let mut pool = EnvPool::new(
        bundle.scenario.clone(),
        bundle.surrogate.clone(),
        tcfg.n_envs,
        state.next_env_seed,
    )?;

    let metrics_path = out_dir.join("metrics.csv");
    let fresh = tcfg.resume_from.is_none() || !metrics_path.exists();
    let mut metrics = std::io::BufWriter::new(
        std::fs::OpenOptions::new().create(true).append(true).open(&metrics_path)?,
    );
    if fresh && state.update == 0 {
        writeln!(metrics, "{METRICS_HEADER}")?;
    }
    let eval_path = out_dir.join("eval_history.csv");
    let mut eval_log = std::io::BufWriter::new(
        std::fs::OpenOptions::new().create(true).append(true).open(&eval_path)?,
    );
    if fresh && state.update == 0 {
        writeln!(eval_log, "update,steps,total_reward,match_wait_s,pickup_wait_s,violation_rate")?;
    }

    let eval_seeds: Vec<u64> =
        (0..tcfg.eval_episodes as u64).map(|i| tcfg.eval_seed_base + i).collect();
    let mut last_ckpt = write_checkpoint(&ckpt_root, state.update, &policy, &state)?;
    let mut final_eval = None;

    while state.steps < tcfg.total_steps {
        let update = state.update + 1;
        let mut collect_rng = update_rng(state.master_seed, update, 0);
        let mut update_rng_ = update_rng(state.master_seed, update, 1);

        let mut buffer = match grpo {
            None => collect_rollouts(&mut pool, &mut policy, ppo.n_steps, &bundle.reward, &mut mult, &mut collect_rng)?,
            Some(g) => collect_rollouts_grpo(
                &mut pool,
                &mut policy,
                ppo.n_steps,
                &bundle.reward,
                &mut mult,
                &mut collect_rng,
                g,
                state.master_seed ^ update.wrapping_mul(0xA24B_AED4_963E_E407),
            )?,
        };
        compute_gae(&mut buffer, ppo.gamma, ppo.gae_lambda);
        if let Some(g) = grpo {
            blend_grpo_scores(&mut buffer, g.beta_g);
        }
        buffer.normalize_advantages();

        let stats = ppo_update(&buffer, &mut policy, ppo, update, &mut update_rng_)?;
        policy.load_balance_adjust();

        state.update = update;
        state.steps += buffer.len() as u64;
        state.lambda = mult.lambda;
        state.next_env_seed = pool.next_seed();

        let row = MetricsRow {
            update,
            steps: state.steps,
            mean_reward: buffer.mean_reward(),
            match_wait_s: mean_s(&buffer.match_waits_h),
            pickup_wait_s: mean_s(&buffer.pickup_waits_h),
            g: buffer.last_g,
            lambda: mult.lambda,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_frac: stats.clip_frac,
        };
        writeln!(
            metrics,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.update,
            row.steps,
            row.mean_reward,
            row.match_wait_s,
            row.pickup_wait_s,
            row.g,
            row.lambda,
            row.policy_loss,
            row.value_loss,
            row.entropy,
            row.clip_frac
        )?;
        metrics.flush()?;

        let due_eval = tcfg.eval_every_updates > 0 && update % tcfg.eval_every_updates as u64 == 0;
        let finished = state.steps >= tcfg.total_steps;
        if due_eval || finished {
            let report = evaluate_policy(
                PolicySource::Learned { policy: &mut policy, mask: None },
                bundle,
                &eval_seeds,
                None,
            )?;
            writeln!(
                eval_log,
                "{},{},{},{},{},{}",
                update,
                state.steps,
                report.total_reward_mean,
                report.match_wait_mean_s,
                report.pickup_wait_mean_s,
                report.violation_rate
            )?;
            eval_log.flush()?;
            if finished {
                final_eval = Some(report);
            }
        }

        let due_ckpt = tcfg.checkpoint_every_updates > 0 && update % tcfg.checkpoint_every_updates as u64 == 0;
        if due_ckpt || finished {
            last_ckpt = write_checkpoint(&ckpt_root, update, &policy, &state)?;
        }
    }

    // hour-bucketed expert utilization accumulated over all rollouts
    let report = policy.utilization_report();
    let mut util = std::io::BufWriter::new(std::fs::File::create(out_dir.join("utilization.csv"))?);
    writeln!(util, "expert_id,hour,activation_count")?;
    for (e, row) in report.hourly_counts.iter().enumerate() {
        for (hour, count) in row.iter().enumerate() {
            writeln!(util, "{e},{hour},{count}")?;
        }
    }
    util.flush()?;

    Ok(TrainOutcome {
        updates: state.update,
        steps: state.steps,
        lambda: state.lambda,
        final_checkpoint: last_ckpt,
        metrics_path,
        final_eval,
    })
}

/// Convenience used by CLI baselines: evaluate a heuristic on the bundle.
pub fn evaluate_heuristic(
    kind: HeuristicKind,
    bundle: &ScenarioBundle,
    seeds: &[u64],
) -> Result<EvalReport, TrainError> {
    evaluate_policy(PolicySource::Heuristic(kind), bundle, seeds, None)
}
