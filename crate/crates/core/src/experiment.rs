//! Experiment drivers shared by the command-line tool and the integration
//! tests: environment construction, training with a metrics sink, and
//! scoring of learned cache placements.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{evaluate, random_policy, CacheRewardModel, RandomActions};
use crate::config::Validated;
use crate::env::{CacheEnv, EnvError, FrozenAllocation, MultiAgentEnv, ResourceEnv, World};
use crate::maddpg::{EpisodeLog, TrainError, Trainer};
use crate::metrics::FileSink;
use crate::neural::NeuralError;

pub fn resource_env(cfg: &Validated, steps: usize) -> Result<ResourceEnv, EnvError> {
    Ok(ResourceEnv::new(World::new(cfg)?).with_episode_len(steps))
}

pub fn cache_env(
    cfg: &Validated,
    alloc: FrozenAllocation,
    steps: usize,
) -> Result<CacheEnv, EnvError> {
    Ok(CacheEnv::new(World::new(cfg)?, alloc)?.with_episode_len(steps))
}

/// Nominal association with every user's power factor set to `beta`.
pub fn nominal_allocation(world: &World, beta: f64) -> FrozenAllocation {
    let mut alloc = FrozenAllocation::nominal(world);
    alloc.beta = crate::state::PowerControlVector::clipped(vec![beta; world.config().num_users()]);
    alloc
}

/// Allocation chosen by trained resource actors on a fresh episode.
pub fn policy_allocation(
    trainer: &mut Trainer<ResourceEnv>,
    seed: u64,
) -> Result<FrozenAllocation, NeuralError> {
    let obs = trainer.env_mut().reset(seed);
    let actions = trainer.greedy_actions(&obs)?;
    Ok(FrozenAllocation::from_actions(
        &actions,
        trainer.env().world().config(),
    ))
}

/// Trains to the configured episode count, appending each episode to
/// `sink` when given.
pub fn run_training<E: MultiAgentEnv>(
    trainer: &mut Trainer<E>,
    mut sink: Option<&mut FileSink>,
) -> Result<Vec<EpisodeLog>, TrainError> {
    trainer.train(|log| {
        if let Some(s) = sink.as_deref_mut() {
            s.write(log)?;
        }
        Ok(())
    })
}

/// Mean `mean_reward` over the last `window` logs.
pub fn final_mean(logs: &[EpisodeLog], window: usize) -> f64 {
    let tail = &logs[logs.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|l| l.mean_reward).sum::<f64>() / tail.len() as f64
}

/// Mean per-step system efficiency of uniformly random actions.
pub fn random_baseline<E>(env: &E, episodes: usize, seed: u64) -> Result<f64, EnvError>
where
    E: MultiAgentEnv + RandomActions + Clone,
{
    let mut run = env.clone();
    let summary = evaluate(&mut run, episodes, seed, |_, rng| random_policy(env, rng))?;
    Ok(summary.mean_ee)
}

/// Analytic quality of a cache policy's placements.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CacheScore {
    /// Expected hit rate averaged over the rollout.
    pub hit_rate: f64,
    /// Expected system efficiency averaged over the rollout.
    pub expected_ee: f64,
    /// Most frequent placement in the rollout, earliest on ties.
    pub placement: Vec<BTreeSet<usize>>,
}

/// Rolls the noise-free cache actors for one episode seeded with `seed` and
/// scores every placement they choose against `model`.
pub fn score_cache_policy(
    trainer: &mut Trainer<CacheEnv>,
    model: &CacheRewardModel,
    seed: u64,
) -> Result<CacheScore, TrainError> {
    let mut obs = trainer.env_mut().reset(seed);
    let mut seen: Vec<(Vec<BTreeSet<usize>>, usize)> = Vec::new();
    let (mut hit, mut ee, mut steps) = (0.0, 0.0, 0usize);
    loop {
        let actions = trainer.greedy_actions(&obs)?;
        let placement: Vec<BTreeSet<usize>> = trainer
            .env()
            .decode(&actions)
            .iter()
            .map(|p| p.files().clone())
            .collect();
        hit += trainer.env().expected_hit_rate(&placement);
        ee += model.expected_reward(&placement);
        steps += 1;
        match seen.iter_mut().find(|(p, _)| *p == placement) {
            Some((_, n)) => *n += 1,
            None => seen.push((placement, 1)),
        }
        let r = trainer.env_mut().step(&actions)?;
        obs = r.obs;
        if r.done {
            break;
        }
    }
    let mut best = 0;
    for (i, (_, n)) in seen.iter().enumerate() {
        if *n > seen[best].1 {
            best = i;
        }
    }
    let s = steps as f64;
    Ok(CacheScore {
        hit_rate: hit / s,
        expected_ee: ee / s,
        placement: seen.swap_remove(best).0,
    })
}

/// Evaluation-episode seed derived from a training seed.
pub fn eval_seed(seed: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1).random()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maddpg::EpisodeLog;

    fn log(e: usize, r: f64) -> EpisodeLog {
        EpisodeLog {
            episode: e,
            mean_reward: r,
            ..EpisodeLog::default()
        }
    }

    #[test]
    fn final_mean_windows() {
        let logs: Vec<EpisodeLog> = (1..=10).map(|e| log(e, e as f64)).collect();
        assert_eq!(final_mean(&logs, 4), 8.5);
        assert_eq!(final_mean(&logs, 100), 5.5);
        assert_eq!(final_mean(&[], 3), 0.0);
    }
}
