//! The two multi-agent environments.
//!
//! [`ResourceEnv`] treats every user as an agent choosing a facility and a
//! power factor; [`CacheEnv`] treats every facility as an agent choosing
//! which files to keep. Both share a [`World`]: the topology and content
//! popularity are fixed for the whole run, fading and requests are redrawn
//! every slot from a generator reseeded on [`MultiAgentEnv::reset`].
//!
//! Observations are the binary improvement indicator: 1 when the agent's
//! reward did not drop since the previous slot (the slot before the first
//! counts as 0). With `extended_obs` the previous reward is appended.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::caching::{
    cache_hit_rate, sample_requests, top_files, CacheError, CachePool, ZipfPopularity,
};
use crate::channel::{realize_channels, ChannelError, ChannelRealization};
use crate::config::{NetworkConfig, Validated};
use crate::link::{system_metrics, LinkMetrics};
use crate::neural::Activation;
use crate::state::{
    cache_capacity, user_capacity, AssociationMatrix, Facility, NetworkState, PowerControlVector,
};
use crate::topology::{generate_topology, Topology};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode finished, call reset first")]
    StepAfterDone,
    #[error("expected {expected} action vectors, got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error("agent {agent}: action length {got}, expected {expected}")]
    ActionLength {
        agent: usize,
        expected: usize,
        got: usize,
    },
    #[error("frozen allocation does not match the network")]
    AllocationShape,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Everything that stays fixed for a run.
#[derive(Clone, Debug)]
pub struct World {
    cfg: NetworkConfig,
    topo: Topology,
    popularity: ZipfPopularity,
}

impl World {
    /// Topology is drawn from `cfg.seed`.
    pub fn new(cfg: &Validated) -> Result<Self, EnvError> {
        let cfg = cfg.config().clone();
        let topo = generate_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let popularity = ZipfPopularity::new(cfg.library_size, cfg.zipf_exponent)?;
        Ok(Self {
            cfg,
            topo,
            popularity,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn popularity(&self) -> &ZipfPopularity {
        &self.popularity
    }
}

/// Per-component output activations of an actor, as runs of equal
/// activation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionLayout(pub Vec<(Activation, usize)>);

impl ActionLayout {
    pub fn dim(&self) -> usize {
        self.0.iter().map(|&(_, n)| n).sum()
    }

    /// One activation per action component.
    pub fn expanded(&self) -> Vec<Activation> {
        self.0
            .iter()
            .flat_map(|&(a, n)| std::iter::repeat_n(a, n))
            .collect()
    }

    pub fn repeated(&self, times: usize) -> Self {
        let mut runs = Vec::with_capacity(self.0.len() * times);
        for _ in 0..times {
            runs.extend_from_slice(&self.0);
        }
        Self(runs)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepInfo {
    pub step: usize,
    /// Sum of per-user efficiency.
    pub system_ee: f64,
    pub hit_rate: f64,
    pub associated: usize,
    /// Constraint violations found on the repaired state.
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub info: StepInfo,
}

pub trait MultiAgentEnv {
    fn num_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn action_layout(&self) -> ActionLayout;
    fn episode_len(&self) -> usize;
    /// Starts an episode with slot randomness seeded from `seed`.
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult, EnvError>;
    /// Short text form of one agent's action, for traces.
    fn describe_action(&self, action: &[f64]) -> String;
}

pub const DEFAULT_EPISODE_LEN: usize = 100;

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &x) in xs.iter().enumerate() {
        let v = if x.is_nan() { f64::NEG_INFINITY } else { x };
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Turns raw per-user actions (`M+K` logits followed by β) into a feasible
/// association and power-control vector. Each user takes its argmax
/// facility; over-subscribed facilities admit users in ascending index
/// order and leave the rest unassociated. β is clipped to `[0, 1]`.
pub fn repair_actions(
    actions: &[Vec<f64>],
    cfg: &NetworkConfig,
) -> (AssociationMatrix, PowerControlVector) {
    let nf = cfg.num_facilities();
    let mut assoc = AssociationMatrix::new(actions.len(), cfg.num_bs, cfg.num_sat);
    let mut load = vec![0usize; nf];
    for (user, a) in actions.iter().enumerate() {
        let f = argmax(&a[..nf]);
        let facility = Facility::from_index(f, cfg.num_bs);
        if load[f] < user_capacity(cfg, facility) {
            load[f] += 1;
            assoc
                .set(user, Some(facility))
                .expect("user and facility in range");
        }
    }
    let beta =
        PowerControlVector::clipped(actions.iter().map(|a| a.get(nf).copied().unwrap_or(0.0)));
    (assoc, beta)
}

fn check_actions(actions: &[Vec<f64>], agents: usize, dim: usize) -> Result<(), EnvError> {
    if actions.len() != agents {
        return Err(EnvError::AgentCount {
            expected: agents,
            got: actions.len(),
        });
    }
    if let Some((agent, a)) = actions.iter().enumerate().find(|(_, a)| a.len() != dim) {
        return Err(EnvError::ActionLength {
            agent,
            expected: dim,
            got: a.len(),
        });
    }
    Ok(())
}

fn indicator_obs(rewards: &[f64], prev: &[f64], extended: bool) -> Vec<Vec<f64>> {
    rewards
        .iter()
        .zip(prev)
        .map(|(&r, &p)| {
            let bit = if r >= p { 1.0 } else { 0.0 };
            if extended {
                vec![bit, r]
            } else {
                vec![bit]
            }
        })
        .collect()
}

/// Slot bookkeeping shared by both environments.
#[derive(Clone, Debug)]
struct Episode {
    rng: ChaCha8Rng,
    prev: Vec<f64>,
    t: usize,
    len: usize,
    violations: usize,
}

impl Episode {
    fn new(agents: usize, len: usize) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            prev: vec![0.0; agents],
            t: 0,
            len,
            violations: 0,
        }
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.prev.iter_mut().for_each(|p| *p = 0.0);
        self.t = 0;
    }

    fn done(&self) -> bool {
        self.t >= self.len
    }
}

/// Redraws fading and requests for the current state, resolves hits and
/// evaluates the link layer.
fn run_slot(
    world: &World,
    state: &mut NetworkState,
    rng: &mut ChaCha8Rng,
) -> Result<(ChannelRealization, LinkMetrics, usize), EnvError> {
    let ch = realize_channels(&world.cfg, &world.topo, rng)?;
    state.requests = sample_requests(&world.popularity, world.cfg.num_users(), rng);
    state.resolve_hits();
    let violations = state.audit(&world.cfg);
    debug_assert!(
        violations.is_empty(),
        "constraint violations: {violations:?}"
    );
    let metrics = system_metrics(state, &ch, &world.cfg);
    Ok((ch, metrics, violations.len()))
}

fn initial_obs(agents: usize, extended: bool) -> Vec<Vec<f64>> {
    vec![vec![0.0; if extended { 2 } else { 1 }]; agents]
}

/// Users as agents: association logits plus a power factor.
#[derive(Clone, Debug)]
pub struct ResourceEnv {
    world: World,
    state: NetworkState,
    ep: Episode,
    last_channels: Option<ChannelRealization>,
}

impl ResourceEnv {
    pub fn new(world: World) -> Self {
        let state = NetworkState::new(&world.cfg);
        let ep = Episode::new(world.cfg.num_users(), DEFAULT_EPISODE_LEN);
        Self {
            world,
            state,
            ep,
            last_channels: None,
        }
    }

    pub fn with_episode_len(mut self, len: usize) -> Self {
        self.ep.len = len;
        self
    }

    /// Installs fixed cache pools, one per facility in flat order.
    pub fn with_pools(mut self, pools: Vec<CachePool>) -> Result<Self, EnvError> {
        if pools.len() != self.world.cfg.num_facilities() {
            return Err(EnvError::AllocationShape);
        }
        self.state.pools = pools;
        Ok(self)
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn last_channels(&self) -> Option<&ChannelRealization> {
        self.last_channels.as_ref()
    }

    /// Total constraint violations seen since construction.
    pub fn violations(&self) -> usize {
        self.ep.violations
    }
}

impl MultiAgentEnv for ResourceEnv {
    fn num_agents(&self) -> usize {
        self.world.cfg.num_users()
    }

    fn obs_dim(&self) -> usize {
        if self.world.cfg.extended_obs {
            2
        } else {
            1
        }
    }

    fn action_layout(&self) -> ActionLayout {
        ActionLayout(vec![
            (Activation::Tanh, self.world.cfg.num_facilities()),
            (Activation::Sigmoid, 1),
        ])
    }

    fn episode_len(&self) -> usize {
        self.ep.len
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.ep.reset(seed);
        let pools = std::mem::take(&mut self.state.pools);
        self.state = NetworkState::new(&self.world.cfg);
        self.state.pools = pools;
        self.last_channels = None;
        initial_obs(self.num_agents(), self.world.cfg.extended_obs)
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult, EnvError> {
        if self.ep.done() {
            return Err(EnvError::StepAfterDone);
        }
        check_actions(actions, self.num_agents(), self.action_layout().dim())?;
        let (assoc, beta) = repair_actions(actions, &self.world.cfg);
        self.state.assoc = assoc;
        self.state.beta = beta;
        let (ch, metrics, violations) = run_slot(&self.world, &mut self.state, &mut self.ep.rng)?;
        let rewards: Vec<f64> = metrics.users.iter().map(|u| u.ee).collect();
        let obs = indicator_obs(&rewards, &self.ep.prev, self.world.cfg.extended_obs);
        self.ep.prev.clone_from(&rewards);
        self.ep.t += 1;
        self.ep.violations += violations;
        self.last_channels = Some(ch);
        Ok(StepResult {
            obs,
            rewards,
            done: self.ep.done(),
            info: StepInfo {
                step: self.ep.t,
                system_ee: metrics.objective,
                hit_rate: cache_hit_rate(&self.state.requests)?,
                associated: (0..self.num_agents())
                    .filter(|&u| self.state.assoc.facility(u).is_some())
                    .count(),
                violations,
            },
        })
    }

    fn describe_action(&self, action: &[f64]) -> String {
        let nf = self.world.cfg.num_facilities();
        format!(
            "facility={} beta={}",
            argmax(&action[..nf]),
            action[nf].clamp(0.0, 1.0)
        )
    }
}

/// Association and power factors held fixed while caches are learned.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenAllocation {
    pub assoc: AssociationMatrix,
    pub beta: PowerControlVector,
}

impl FrozenAllocation {
    /// The first `num_bs_users` users go to their nearest BS with room left
    /// (or the next nearest), the remaining users are spread round-robin over
    /// the satellites. Everyone transmits at full power factor.
    pub fn nominal(world: &World) -> Self {
        let cfg = &world.cfg;
        let topo = &world.topo;
        let mut assoc = AssociationMatrix::for_config(cfg);
        let mut load = vec![0usize; cfg.num_facilities()];
        for user in 0..cfg.num_bs_users {
            let mut order: Vec<usize> = (0..cfg.num_bs).collect();
            order.sort_by(|&a, &b| {
                topo.bs_dist[user][a]
                    .total_cmp(&topo.bs_dist[user][b])
                    .then(a.cmp(&b))
            });
            if let Some(&bs) = order.iter().find(|&&m| load[m] < cfg.bs_capacity) {
                load[bs] += 1;
                assoc.set(user, Some(Facility::Bs(bs))).expect("in range");
            }
        }
        for (i, user) in (cfg.num_bs_users..cfg.num_users()).enumerate() {
            let start = i % cfg.num_sat;
            let sat = (0..cfg.num_sat)
                .map(|j| (start + j) % cfg.num_sat)
                .find(|&k| load[cfg.num_bs + k] < cfg.sat_capacity);
            if let Some(k) = sat {
                load[cfg.num_bs + k] += 1;
                assoc.set(user, Some(Facility::Sat(k))).expect("in range");
            }
        }
        Self {
            assoc,
            beta: PowerControlVector::clipped(vec![1.0; cfg.num_users()]),
        }
    }

    /// Allocation produced by one set of raw resource actions.
    pub fn from_actions(actions: &[Vec<f64>], cfg: &NetworkConfig) -> Self {
        let (assoc, beta) = repair_actions(actions, cfg);
        Self { assoc, beta }
    }
}

/// Facilities as agents: one score per library file, the top-capacity files
/// are cached.
#[derive(Clone, Debug)]
pub struct CacheEnv {
    world: World,
    state: NetworkState,
    ep: Episode,
    last_channels: Option<ChannelRealization>,
}

impl CacheEnv {
    pub fn new(world: World, alloc: FrozenAllocation) -> Result<Self, EnvError> {
        let cfg = &world.cfg;
        if alloc.assoc.num_users() != cfg.num_users()
            || alloc.assoc.num_facilities() != cfg.num_facilities()
            || alloc.beta.len() != cfg.num_users()
        {
            return Err(EnvError::AllocationShape);
        }
        let mut state = NetworkState::new(cfg);
        state.assoc = alloc.assoc;
        state.beta = alloc.beta;
        let ep = Episode::new(cfg.num_facilities(), DEFAULT_EPISODE_LEN);
        Ok(Self {
            world,
            state,
            ep,
            last_channels: None,
        })
    }

    pub fn with_episode_len(mut self, len: usize) -> Self {
        self.ep.len = len;
        self
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn violations(&self) -> usize {
        self.ep.violations
    }

    pub fn last_channels(&self) -> Option<&ChannelRealization> {
        self.last_channels.as_ref()
    }

    /// Decodes raw scores into cache pools.
    pub fn decode(&self, actions: &[Vec<f64>]) -> Vec<CachePool> {
        let cfg = &self.world.cfg;
        actions
            .iter()
            .enumerate()
            .map(|(f, scores)| {
                let cap = cache_capacity(cfg, Facility::from_index(f, cfg.num_bs));
                CachePool::new(f, cap, top_files(scores, cap), cfg.library_size)
                    .expect("top files fit")
            })
            .collect()
    }

    /// Expected fraction of requests that hit, for the given placements,
    /// under the popularity law and the frozen association.
    pub fn expected_hit_rate(&self, placements: &[BTreeSet<usize>]) -> f64 {
        let n = self.world.cfg.num_users();
        let total: f64 = (0..n)
            .filter_map(|u| self.state.assoc.facility(u))
            .map(|f| {
                self.world
                    .popularity
                    .mass(&placements[f.index(self.world.cfg.num_bs)])
            })
            .sum();
        total / n as f64
    }
}

impl MultiAgentEnv for CacheEnv {
    fn num_agents(&self) -> usize {
        self.world.cfg.num_facilities()
    }

    fn obs_dim(&self) -> usize {
        if self.world.cfg.extended_obs {
            2
        } else {
            1
        }
    }

    fn action_layout(&self) -> ActionLayout {
        ActionLayout(vec![(Activation::Tanh, self.world.cfg.library_size)])
    }

    fn episode_len(&self) -> usize {
        self.ep.len
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.ep.reset(seed);
        self.last_channels = None;
        initial_obs(self.num_agents(), self.world.cfg.extended_obs)
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult, EnvError> {
        if self.ep.done() {
            return Err(EnvError::StepAfterDone);
        }
        check_actions(actions, self.num_agents(), self.world.cfg.library_size)?;
        self.state.pools = self.decode(actions);
        let (ch, metrics, violations) = run_slot(&self.world, &mut self.state, &mut self.ep.rng)?;
        self.last_channels = Some(ch);
        let rewards: Vec<f64> = (0..self.num_agents())
            .map(|f| metrics.facility_ee(Facility::from_index(f, self.world.cfg.num_bs)))
            .collect();
        let obs = indicator_obs(&rewards, &self.ep.prev, self.world.cfg.extended_obs);
        self.ep.prev.clone_from(&rewards);
        self.ep.t += 1;
        self.ep.violations += violations;
        Ok(StepResult {
            obs,
            rewards,
            done: self.ep.done(),
            info: StepInfo {
                step: self.ep.t,
                system_ee: metrics.objective,
                hit_rate: cache_hit_rate(&self.state.requests)?,
                associated: (0..self.world.cfg.num_users())
                    .filter(|&u| self.state.assoc.facility(u).is_some())
                    .count(),
                violations,
            },
        })
    }

    fn describe_action(&self, action: &[f64]) -> String {
        let cap = action.len().min(
            self.world
                .cfg
                .bs_cache_capacity
                .max(self.world.cfg.sat_cache_capacity),
        );
        let files: Vec<String> = top_files(action, cap)
            .iter()
            .map(|f| f.to_string())
            .collect();
        format!("files={}", files.join(" "))
    }
}

/// One row of an exported episode trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub agent: usize,
    pub action: String,
    pub reward: f64,
    pub indicator: u8,
}

/// Trace rows of one step.
pub fn trace_rows(
    env: &impl MultiAgentEnv,
    actions: &[Vec<f64>],
    result: &StepResult,
) -> Vec<TraceRow> {
    actions
        .iter()
        .zip(&result.rewards)
        .zip(&result.obs)
        .enumerate()
        .map(|(agent, ((a, &r), o))| TraceRow {
            step: result.info.step,
            agent,
            action: env.describe_action(a),
            reward: r,
            indicator: o[0] as u8,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::{energy_efficiency, rate};
    use crate::state::Tier;

    fn world(cfg: NetworkConfig) -> World {
        World::new(&cfg.validate().unwrap()).unwrap()
    }

    fn one_hot(nf: usize, f: usize, beta: f64) -> Vec<f64> {
        let mut a = vec![0.0; nf + 1];
        a[f] = 1.0;
        a[nf] = beta;
        a
    }

    #[test]
    fn repair_examples() {
        let cfg = NetworkConfig {
            num_bs: 2,
            num_sat: 1,
            num_bs_users: 2,
            num_sat_users: 0,
            bs_capacity: 1,
            ..NetworkConfig::default()
        };
        let (a, b) = repair_actions(&[one_hot(3, 0, 0.5), one_hot(3, 0, 1.7)], &cfg);
        assert_eq!(a.facility(0), Some(Facility::Bs(0)));
        assert_eq!(a.facility(1), None);
        assert_eq!(b.as_slice(), &[0.5, 1.0]);

        let (a, _) = repair_actions(&[vec![0.1, 0.9, 0.3, 0.0]], &cfg);
        assert_eq!(a.facility(0), Some(Facility::Bs(1)));
        let (a, b) = repair_actions(&[vec![0.1, 0.2, 0.9, -3.0]], &cfg);
        assert_eq!(a.facility(0), Some(Facility::Sat(0)));
        assert_eq!(b.as_slice(), &[0.0]);
        let (a, _) = repair_actions(&[vec![f64::NAN, 0.2, 0.2, 0.0]], &cfg);
        assert_eq!(a.facility(0), Some(Facility::Bs(1)));
    }

    #[test]
    fn reset_and_first_step() {
        let mut env = ResourceEnv::new(world(NetworkConfig::desk())).with_episode_len(3);
        let obs = env.reset(7);
        assert!(obs.iter().all(|o| o == &vec![0.0]));
        let nf = 4;
        let actions: Vec<_> = (0..12).map(|u| one_hot(nf, u % 3, 0.8)).collect();
        let r = env.step(&actions).unwrap();
        for (o, &rew) in r.obs.iter().zip(&r.rewards) {
            if rew > 0.0 {
                assert_eq!(o[0], 1.0);
            }
        }
        assert_eq!(r.info.violations, 0);
        env.step(&actions).unwrap();
        let last = env.step(&actions).unwrap();
        assert!(last.done);
        assert!(matches!(env.step(&actions), Err(EnvError::StepAfterDone)));
    }

    #[test]
    fn unassociated_user_gets_zero() {
        let cfg = NetworkConfig {
            bs_capacity: 1,
            ..NetworkConfig::desk()
        };
        let mut env = ResourceEnv::new(world(cfg));
        env.reset(1);
        let actions: Vec<_> = (0..12).map(|_| one_hot(4, 0, 1.0)).collect();
        let r = env.step(&actions).unwrap();
        assert!(r.rewards[0] > 0.0);
        assert!(r.rewards[1..].iter().all(|&x| x == 0.0));
        assert_eq!(r.info.associated, 1);
    }

    #[test]
    fn same_seed_same_outcome() {
        let mut env = ResourceEnv::new(world(NetworkConfig::desk()));
        let actions: Vec<_> = (0..12)
            .map(|u| one_hot(4, u % 4, 0.3 + 0.05 * u as f64))
            .collect();
        env.reset(42);
        let a = env.step(&actions).unwrap();
        env.reset(42);
        let b = env.step(&actions).unwrap();
        assert_eq!(a, b);
        env.reset(43);
        env.step(&actions).unwrap();
        let ch43 = env.last_channels().unwrap().clone();
        env.reset(42);
        env.step(&actions).unwrap();
        assert_ne!(env.last_channels().unwrap(), &ch43);
    }

    #[test]
    fn two_user_rewards_match_hand_evaluation() {
        let cfg = NetworkConfig {
            num_bs: 1,
            num_sat: 1,
            num_bs_users: 2,
            num_sat_users: 0,
            ..NetworkConfig::default()
        };
        let mut env = ResourceEnv::new(world(cfg.clone()));
        env.reset(5);
        let r = env.step(&[one_hot(2, 0, 1.0), one_hot(2, 0, 0.5)]).unwrap();
        let ch = env.last_channels().unwrap();
        let hits = &env.state().requests.hits;
        let p = [
            cfg.p_bs_max / cfg.bs_capacity as f64,
            0.5 * cfg.p_bs_max / cfg.bs_capacity as f64,
        ];
        for u in 0..2 {
            let other = 1 - u;
            let sinr =
                ch.bs_gain[u][0] * p[u] / (ch.bs_gain[other][0] * p[other] + cfg.noise_density);
            let want = energy_efficiency(Tier::Bs, rate(sinr), p[u], hits[u], &cfg).unwrap();
            assert!(
                (r.rewards[u] - want).abs() <= 1e-12 * want,
                "{} vs {want}",
                r.rewards[u]
            );
        }
    }

    #[test]
    fn nominal_allocation_respects_capacity() {
        let w = world(NetworkConfig::default());
        let alloc = FrozenAllocation::nominal(&w);
        let cfg = w.config();
        for f in 0..cfg.num_facilities() {
            let fac = Facility::from_index(f, cfg.num_bs);
            assert!(alloc.assoc.column_count(fac) <= user_capacity(cfg, fac));
        }
        for u in cfg.num_bs_users..cfg.num_users() {
            assert!(matches!(alloc.assoc.facility(u), Some(Facility::Sat(_))));
        }
    }

    fn tiny_cache_cfg() -> NetworkConfig {
        NetworkConfig {
            num_bs: 1,
            num_sat: 1,
            num_bs_users: 3,
            num_sat_users: 0,
            library_size: 5,
            bs_cache_capacity: 2,
            sat_cache_capacity: 2,
            zipf_exponent: 1.0,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn cache_rewards_conserve_and_idle_facility_is_zero() {
        let w = world(tiny_cache_cfg());
        let alloc = FrozenAllocation::nominal(&w);
        let mut env = CacheEnv::new(w, alloc).unwrap();
        env.reset(3);
        let scores = vec![vec![0.9, 0.8, 0.1, 0.0, -0.5], vec![0.0; 5]];
        for _ in 0..20 {
            let r = env.step(&scores).unwrap();
            assert_eq!(r.rewards[1], 0.0);
            let total: f64 = r.rewards.iter().sum();
            assert!((total - r.info.system_ee).abs() <= 1e-12 * total.abs());
            assert_eq!(env.state().pools[0].files(), &BTreeSet::from([1, 2]));
        }
    }

    #[test]
    fn cache_reward_hit_and_miss_branches() {
        // one BS, one user, two files, cache one of them
        let cfg = NetworkConfig {
            num_bs: 1,
            num_sat: 1,
            num_bs_users: 1,
            num_sat_users: 0,
            library_size: 2,
            bs_cache_capacity: 1,
            sat_cache_capacity: 1,
            ..NetworkConfig::default()
        };
        let w = world(cfg.clone());
        let alloc = FrozenAllocation::nominal(&w);
        let mut env = CacheEnv::new(w, alloc).unwrap();
        env.reset(11);
        let (mut saw_hit, mut saw_miss) = (false, false);
        let p = cfg.p_bs_max / cfg.bs_capacity as f64;
        for _ in 0..40 {
            let r = env.step(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
            let hit = env.state().requests.requests[0] == 1;
            assert_eq!(env.state().requests.hits[0], hit);
            let g = env.last_channels().unwrap().bs_gain[0][0];
            let r_bits = (1.0 + g * p / cfg.noise_density).log2();
            let retrieve = if hit {
                cfg.p_retrieve_bs
            } else {
                cfg.p_retrieve_core
            };
            let want = r_bits / (p + retrieve);
            assert!((r.rewards[0] - want).abs() <= 1e-12 * want);
            saw_hit |= hit;
            saw_miss |= !hit;
        }
        assert!(saw_hit && saw_miss);
    }

    #[test]
    fn missing_only_the_requested_file_misses() {
        let w = world(NetworkConfig {
            library_size: 4,
            bs_cache_capacity: 3,
            sat_cache_capacity: 3,
            ..NetworkConfig::desk()
        });
        let alloc = FrozenAllocation::nominal(&w);
        let mut env = CacheEnv::new(w, alloc).unwrap();
        env.reset(2);
        let keep_123 = vec![1.0, 0.9, 0.8, -1.0];
        env.step(&vec![keep_123; 4]).unwrap();
        let st = env.state();
        for (u, &file) in st.requests.requests.iter().enumerate() {
            if st.assoc.facility(u).is_some() {
                assert_eq!(st.requests.hits[u], file != 4);
            }
        }
    }

    #[test]
    fn trace_rows_follow_agents() {
        let mut env = ResourceEnv::new(world(NetworkConfig::desk()));
        env.reset(1);
        let actions: Vec<_> = (0..12).map(|u| one_hot(4, u % 4, 0.5)).collect();
        let r = env.step(&actions).unwrap();
        let rows = trace_rows(&env, &actions, &r);
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[5].action, "facility=1 beta=0.5");
        assert_eq!(rows[5].step, 1);
    }
}
