//! Self-contained invariant checks: popularity normalization, beam gain,
//! Bessel recurrence, Doppler invariance, gradient checks on every network
//! shape a config uses, optimizer and replay sanity, and run determinism.
//!
//! Each check returns a [`CheckOutcome`] holding the worst observed value
//! and the bound it must stay within.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::ddpg_single;
use crate::caching::zipf_pmf;
use crate::channel::{bessel_j, realize_channels, sat_beam_gain};
use crate::config::{NetworkConfig, ValidateOptions};
use crate::env::{FrozenAllocation, MultiAgentEnv, World};
use crate::experiment::{cache_env, resource_env, run_training};
use crate::link::system_metrics;
use crate::maddpg::{
    AgentBundle, ReplayBuffer, Role, TrainConfig, TrainError, Trainer, Transition,
};
use crate::metrics::{CsvSink, METRICS_HEADER};
use crate::neural::gradcheck::{check_net, GradCheckReport};
use crate::neural::{AdamState, DenseNet};
use crate::state::NetworkState;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    /// Worst value seen.
    pub value: f64,
    /// Passing requires `value <= bound`.
    pub bound: f64,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.bound
    }
}

/// `|Σ y - 1|` over a grid of library sizes and exponents.
pub fn zipf_normalization() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for u in [1, 3, 40, 1000] {
        for e in [0.56, 0.83, 1.0] {
            let pop = zipf_pmf(u, e).expect("valid grid");
            worst = worst.max((pop.pmf().iter().sum::<f64>() - 1.0).abs());
        }
    }
    CheckOutcome::new("zipf normalization", worst, 1e-12)
}

/// Relative deviation of the beam gain from its peak as the off-axis angle
/// shrinks towards zero.
pub fn boresight_gain(cfg: &NetworkConfig) -> CheckOutcome {
    let worst = [0.0, 1e-12, 1e-9, 1e-7]
        .iter()
        .map(|&t| (sat_beam_gain(t, cfg.theta_3db, cfg.g_max) - cfg.g_max).abs() / cfg.g_max)
        .fold(0.0, f64::max);
    CheckOutcome::new("boresight gain", worst, 1e-6)
}

/// `|J_{n-1}(x) + J_{n+1}(x) - (2n/x) J_n(x)|` for orders 1 to 4 on a grid
/// over `[0.1, 20]`.
pub fn bessel_recurrence() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for i in 0..=400 {
        let x = 0.1 + 19.9 * i as f64 / 400.0;
        for n in 1..=4u32 {
            let j = |k: u32| bessel_j(k, x).expect("in range");
            let r = j(n - 1) + j(n + 1) - 2.0 * n as f64 / x * j(n);
            worst = worst.max(r.abs());
        }
    }
    CheckOutcome::new("bessel recurrence", worst, 1e-10)
}

/// Number of users whose SINR changes at all when only the Doppler
/// parameter differs, over several slots with random actions.
pub fn doppler_invariance(cfg: &NetworkConfig) -> CheckOutcome {
    let base = cfg.validate().expect("valid config");
    let world = World::new(&base).expect("world");
    let mut state = NetworkState::new(&base);
    let alloc = FrozenAllocation::nominal(&world);
    state.assoc = alloc.assoc;
    let mut diffs = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for slot in 0..8u64 {
        state.beta = crate::state::PowerControlVector::clipped(
            (0..base.num_users()).map(|_| rng.random::<f64>()),
        );
        let metrics = |doppler: f64| {
            let c = NetworkConfig {
                doppler,
                ..base.config().clone()
            };
            let ch = realize_channels(&c, world.topology(), &mut ChaCha8Rng::seed_from_u64(slot))
                .expect("channels");
            system_metrics(&state, &ch, &c)
        };
        let a = metrics(0.0);
        for d in [0.25, 0.731, -1.4] {
            let b = metrics(d);
            diffs += a
                .users
                .iter()
                .zip(&b.users)
                .filter(|(x, y)| x.sinr.to_bits() != y.sinr.to_bits())
                .count();
        }
    }
    CheckOutcome::new("doppler invariance", diffs as f64, 0.0)
}

/// Finite-difference check of one network at a random input and output
/// weighting.
pub fn gradcheck_net(net: &DenseNet, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input: Vec<f64> = (0..net.input_dim())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let weights: Vec<f64> = (0..net.output_dim())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    check_net(net, &input, &weights, 1e-6)
}

fn bundle_nets(name: &str, agent: &AgentBundle) -> [(String, DenseNet); 2] {
    [
        (format!("{name} actor"), agent.actor.net.clone()),
        (format!("{name} critic"), agent.critic.clone()),
    ]
}

/// Every distinct actor and critic shape the trainers build for `cfg`:
/// resource agents, the centralized resource agent, and cache agents.
pub fn network_shapes(
    cfg: &NetworkConfig,
    train: &TrainConfig,
) -> Result<Vec<(String, DenseNet)>, TrainError> {
    let v = cfg.validate_with(ValidateOptions {
        allow_full_cache: true,
    })?;
    let world = World::new(&v)?;
    let short = TrainConfig {
        episodes: 1,
        steps_per_episode: 1,
        ..train.clone()
    };
    let mut out = Vec::new();
    let t = Trainer::new(resource_env(&v, 1)?, short.clone(), Role::User)?;
    out.extend(bundle_nets("resource", &t.agents()[0]));
    let t = ddpg_single(resource_env(&v, 1)?, short.clone())?;
    out.extend(bundle_nets("central resource", &t.agents()[0]));
    let t = Trainer::new(
        cache_env(&v, FrozenAllocation::nominal(&world), 1)?,
        short,
        Role::Facility,
    )?;
    out.extend(bundle_nets("cache", &t.agents()[0]));
    Ok(out)
}

/// Gradient check of every shape from [`network_shapes`].
pub fn gradcheck_shapes(
    cfg: &NetworkConfig,
    train: &TrainConfig,
) -> Result<Vec<(String, Vec<usize>, GradCheckReport)>, TrainError> {
    Ok(network_shapes(cfg, train)?
        .into_iter()
        .enumerate()
        .map(|(i, (name, net))| {
            let report = gradcheck_net(&net, train.seed.wrapping_add(i as u64));
            (name, net.sizes().to_vec(), report)
        })
        .collect())
}

/// `| |first Adam step| - lr |` on a scalar problem with gradient 1.
pub fn adam_first_step(lr: f64) -> CheckOutcome {
    let mut p = [0.5];
    let mut opt = AdamState::new(1, lr);
    opt.step(&mut p, &[1.0]).expect("one parameter");
    CheckOutcome::new("adam first step", ((0.5 - p[0]).abs() - lr).abs(), 1e-9)
}

/// Ratio of a critic's loss after `updates` steps on one fixed batch to its
/// initial loss. The critic has the resource-agent shape for `cfg`.
pub fn overfit_one_batch(
    cfg: &NetworkConfig,
    train: &TrainConfig,
    updates: usize,
) -> Result<CheckOutcome, TrainError> {
    let v = cfg.validate()?;
    let env = resource_env(&v, 1)?;
    let fit = TrainConfig {
        gamma: 0.0,
        ..train.clone()
    };
    let n = env.num_agents();
    let layout = env.action_layout();
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut agent = AgentBundle::new(Role::User, 0, n, env.obs_dim(), &layout, &fit, &mut rng);
    let joint_obs = n * env.obs_dim();
    let joint_act = n * layout.dim();
    let samples: Vec<Transition> = (0..train.batch_size)
        .map(|_| Transition {
            obs: (0..joint_obs)
                .map(|_| rng.random::<f64>().round())
                .collect(),
            actions: (0..joint_act)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            rewards: (0..n).map(|_| rng.random_range(0.0..2.0)).collect(),
            next_obs: vec![0.0; joint_obs],
        })
        .collect();
    let next = vec![vec![0.0; joint_act]; samples.len()];
    let first = agent.fit_critic(&samples, next.clone(), &fit)?;
    for _ in 1..updates {
        agent.fit_critic(&samples, next.clone(), &fit)?;
    }
    let last = agent.fit_critic(&samples, next, &fit)?;
    Ok(CheckOutcome::new("overfit one batch", last / first, 0.01))
}

/// Number of FIFO violations when pushing past capacity.
pub fn replay_fifo() -> CheckOutcome {
    let mut buf = ReplayBuffer::new(5);
    let tag = |x: f64| Transition {
        obs: vec![x],
        actions: vec![],
        rewards: vec![],
        next_obs: vec![],
    };
    for i in 0..12 {
        buf.push(tag(i as f64));
    }
    let kept: Vec<f64> = buf.iter().map(|t| t.obs[0]).collect();
    let bad = kept
        .iter()
        .zip(7..12)
        .filter(|(k, want)| **k != *want as f64)
        .count()
        + (5 - kept.len().min(5));
    CheckOutcome::new("replay fifo", bad as f64, 0.0)
}

fn metrics_bytes(cfg: &NetworkConfig, train: &TrainConfig) -> Result<Vec<u8>, TrainError> {
    let v = cfg.validate()?;
    let world = World::new(&v)?;
    let env = cache_env(
        &v,
        FrozenAllocation::nominal(&world),
        train.steps_per_episode,
    )?;
    let mut trainer = Trainer::new(env, train.clone(), Role::Facility)?;
    let logs = run_training(&mut trainer, None)?;
    let mut sink = CsvSink::new(Vec::new(), &METRICS_HEADER)?;
    for l in &logs {
        sink.write(l)?;
    }
    Ok(sink.into_inner()?)
}

/// Number of differing bytes between the metrics of two identical short
/// training runs, plus the length difference.
pub fn determinism(cfg: &NetworkConfig, train: &TrainConfig) -> Result<CheckOutcome, TrainError> {
    let a = metrics_bytes(cfg, train)?;
    let b = metrics_bytes(cfg, train)?;
    let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    Ok(CheckOutcome::new("determinism", diff as f64, 0.0))
}
