//! Policy evaluation with greedy action selection.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ScenarioConfig, SimEnv, Surrogate, TravelTimes};
use crate::error::TrainError;
use crate::mfd::PerturbationSpec;
use crate::netgraph::NetworkGraph;
use crate::policy::{ExpertMask, Policy};
use crate::reward::{MultiplierState, RewardConfig};

use super::heuristic::{HeuristicKind, HeuristicPolicy};

/// A runnable scenario: simulator config, road graph, travel-time surrogate
/// and reward settings.
#[derive(Clone)]
pub struct ScenarioBundle {
    pub scenario: Arc<ScenarioConfig>,
    pub graph: Arc<NetworkGraph>,
    pub surrogate: Arc<Surrogate>,
    pub reward: RewardConfig,
}

impl ScenarioBundle {
    /// Travel times for evaluation, optionally under a perturbation
    /// scenario (the base surrogate is untouched).
    pub fn times(&self, perturb: Option<&PerturbationSpec>) -> Result<Arc<dyn TravelTimes + Send + Sync>, TrainError> {
        match perturb {
            None => Ok(self.surrogate.clone()),
            Some(spec) => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                let table = self.surrogate.table.perturb(spec, &self.graph, &mut rng)?;
                Ok(Arc::new(Surrogate {
                    table,
                    speeds: self.surrogate.speeds.clone(),
                    intra_zone_km: self.surrogate.intra_zone_km,
                }))
            }
        }
    }
}

/// What is being evaluated.
pub enum PolicySource<'a> {
    Learned { policy: &'a mut Policy, mask: Option<&'a ExpertMask> },
    Heuristic(HeuristicKind),
}

/// Aggregate service metrics over evaluation episodes.
///
/// Wait statistics pool the requests of all episodes (censored: a request
/// still unmatched at episode end contributes its accrued matching wait).
/// The reward column is the pure service cost (multiplier term off), so
/// learned policies and heuristics are on the same scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub match_wait_mean_s: f64,
    pub match_wait_std_s: f64,
    pub pickup_wait_mean_s: f64,
    pub pickup_wait_std_s: f64,
    pub total_reward_mean: f64,
    /// Fraction of requests whose matching or pickup wait was late.
    pub violation_rate: f64,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub requests_counted: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs greedy episodes on the given seeds and aggregates waits over
/// completed requests, excluding warm-up-created ones.
pub fn evaluate_policy(
    mut source: PolicySource,
    bundle: &ScenarioBundle,
    seeds: &[u64],
    perturb: Option<&PerturbationSpec>,
) -> Result<EvalReport, TrainError> {
    let times = bundle.times(perturb)?;
    let n = bundle.scenario.n_zones();
    let zero_mult = MultiplierState { lambda: 0.0 };
    let mut match_waits = Vec::new();
    let mut pickup_waits = Vec::new();
    let mut late = 0usize;
    let mut counted = 0usize;
    let mut episode_rewards = Vec::with_capacity(seeds.len());
    let late_h = bundle.reward.late_threshold_s / 3600.0;

    for &seed in seeds {
        let mut env = SimEnv::new(bundle.scenario.clone(), times.clone(), seed)?;
        let mut heuristic = match &source {
            PolicySource::Heuristic(kind) => Some(HeuristicPolicy::new(*kind)),
            PolicySource::Learned { .. } => None,
        };
        let mut total_r = 0.0;
        while !env.is_done() {
            let action = match &mut source {
                PolicySource::Learned { policy, mask } => {
                    let obs = env.observe();
                    crate::env::Action::from_slice(&policy.act_greedy(&obs, *mask, true)?)
                }
                PolicySource::Heuristic(_) => heuristic.as_mut().unwrap().action(env.clock_h, n),
            };
            let out = env.step(&action, &bundle.reward, &zero_mult)?;
            total_r += out.breakdown.r;
        }
        episode_rewards.push(total_r);

        let end = env.clock_h;
        for req in env.requests() {
            if req.warmup {
                continue;
            }
            counted += 1;
            let mw = req.matching_wait_h().unwrap_or(end - req.request_time);
            match_waits.push(mw * 3600.0);
            let mut is_late = mw > late_h;
            if let Some(pw) = req.pickup_wait_h() {
                pickup_waits.push(pw * 3600.0);
                is_late |= pw > late_h;
            }
            if is_late {
                late += 1;
            }
        }
    }

    let (mm, ms) = mean_std(&match_waits);
    let (pm, ps) = mean_std(&pickup_waits);
    let (rm, _) = mean_std(&episode_rewards);
    Ok(EvalReport {
        match_wait_mean_s: mm,
        match_wait_std_s: ms,
        pickup_wait_mean_s: pm,
        pickup_wait_std_s: ps,
        total_reward_mean: rm,
        violation_rate: if counted == 0 { 0.0 } else { late as f64 / counted as f64 },
        episodes: seeds.len(),
        seeds: seeds.to_vec(),
        requests_counted: counted,
    })
}
