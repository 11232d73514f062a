//! Comparators: random actions, popularity-greedy caching, an exhaustive
//! cache-placement oracle and the single-agent reduction of the trainer.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caching::{top_files, ZipfPopularity};
use crate::channel::realize_channels;
use crate::config::NetworkConfig;
use crate::env::{ActionLayout, CacheEnv, EnvError, MultiAgentEnv, ResourceEnv, StepResult};
use crate::exec::ExecMode;
use crate::link::system_metrics;
use crate::maddpg::{Role, TrainConfig, TrainError, Trainer};
use crate::state::{cache_capacity, Facility};

/// Largest number of joint placements the oracle will enumerate.
pub const ORACLE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("{placements} joint placements exceed the enumeration limit of {limit}")]
    TooLarge { placements: u128, limit: u128 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which policy to run. Serialized with a `kind` tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Random,
    GreedyCache,
    ExhaustiveCache {
        /// Fading draws behind the expected-reward model.
        #[serde(default = "default_oracle_draws")]
        draws: usize,
    },
    DdpgSingle,
    Maddpg,
}

fn default_oracle_draws() -> usize {
    200
}

impl PolicySpec {
    /// Rejects exhaustive search on instances above [`ORACLE_LIMIT`].
    pub fn check(&self, cfg: &NetworkConfig) -> Result<(), BaselineError> {
        if let PolicySpec::ExhaustiveCache { .. } = self {
            let caps = facility_cache_capacities(cfg);
            placement_count(cfg.library_size, &caps)?;
        }
        Ok(())
    }
}

pub fn facility_cache_capacities(cfg: &NetworkConfig) -> Vec<usize> {
    (0..cfg.num_facilities())
        .map(|f| cache_capacity(cfg, Facility::from_index(f, cfg.num_bs)))
        .collect()
}

/// Environments that can produce uniformly random actions.
pub trait RandomActions {
    fn random_actions(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>>;
}

impl RandomActions for ResourceEnv {
    /// One-hot uniform facility, uniform β.
    fn random_actions(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let nf = self.world().config().num_facilities();
        (0..self.num_agents())
            .map(|_| {
                let mut a = vec![0.0; nf + 1];
                a[rng.random_range(0..nf)] = 1.0;
                a[nf] = rng.random::<f64>();
                a
            })
            .collect()
    }
}

impl RandomActions for CacheEnv {
    /// Scores of 1 on a uniformly drawn set of distinct files, 0 elsewhere.
    fn random_actions(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let cfg = self.world().config();
        facility_cache_capacities(cfg)
            .into_iter()
            .map(|cap| {
                let mut scores = vec![0.0; cfg.library_size];
                for i in sample_indices(rng, cfg.library_size, cap) {
                    scores[i] = 1.0;
                }
                scores
            })
            .collect()
    }
}

pub fn random_policy<E: RandomActions>(env: &E, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    env.random_actions(rng)
}

/// The `capacity` most popular files.
pub fn greedy_popularity_cache(pop: &ZipfPopularity, capacity: usize) -> BTreeSet<usize> {
    top_files(pop.pmf(), capacity.min(pop.library_size()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_ee: f64,
    pub mean_hit_rate: f64,
    pub violations: usize,
}

/// Runs `policy` for `episodes` full episodes. Episode seeds come from a
/// generator seeded with `seed`, which is also handed to the policy.
pub fn evaluate<E: MultiAgentEnv>(
    env: &mut E,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&[Vec<f64>], &mut ChaCha8Rng) -> Vec<Vec<f64>>,
) -> Result<EvalSummary, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ee, mut hit, mut steps, mut violations) = (0.0, 0.0, 0usize, 0usize);
    for _ in 0..episodes {
        let mut obs = env.reset(rng.random());
        loop {
            let actions = policy(&obs, &mut rng);
            let r = env.step(&actions)?;
            ee += r.info.system_ee;
            hit += r.info.hit_rate;
            violations += r.info.violations;
            steps += 1;
            obs = r.obs;
            if r.done {
                break;
            }
        }
    }
    let s = steps.max(1) as f64;
    Ok(EvalSummary {
        episodes,
        mean_ee: ee / s,
        mean_hit_rate: hit / s,
        violations,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

fn placement_count(library: usize, capacities: &[usize]) -> Result<u128, BaselineError> {
    let mut total: u128 = 1;
    for &cap in capacities {
        total = total.saturating_mul(binomial(library, cap.min(library)));
        if total > ORACLE_LIMIT {
            return Err(BaselineError::TooLarge {
                placements: total,
                limit: ORACLE_LIMIT,
            });
        }
    }
    Ok(total)
}

/// All `k`-subsets of `1..=n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<BTreeSet<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (1..=k).collect();
    loop {
        out.push(idx.iter().copied().collect());
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i + 1) else {
            break;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub best: Vec<BTreeSet<usize>>,
    pub value: f64,
    /// Every joint placement with its value, in enumeration order.
    pub table: Vec<(Vec<BTreeSet<usize>>, f64)>,
}

impl OracleResult {
    /// One `placement,expected_value` row per joint placement. Facilities
    /// are separated by `|`, files by spaces.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BaselineError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["placement", "expected_value"])
            .map_err(std::io::Error::from)?;
        for (p, v) in &self.table {
            out.write_record([format_placement(p), v.to_string()])
                .map_err(std::io::Error::from)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn format_placement(p: &[BTreeSet<usize>]) -> String {
    p.iter()
        .map(|s| {
            s.iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("|")
}

/// Enumerates every joint placement (facility 0 varies slowest, subsets in
/// lexicographic order) and returns the best under `evaluate`, ties going
/// to the earliest placement.
pub fn exhaustive_cache_oracle(
    evaluate: impl Fn(&[BTreeSet<usize>]) -> f64 + Sync + Send,
    library: usize,
    capacities: &[usize],
    mode: ExecMode,
) -> Result<OracleResult, BaselineError> {
    let total = placement_count(library, capacities)? as usize;
    let per_facility: Vec<Vec<BTreeSet<usize>>> = capacities
        .iter()
        .map(|&c| combinations(library, c.min(library)))
        .collect();
    let decode = |mut i: usize| -> Vec<BTreeSet<usize>> {
        let mut p = vec![BTreeSet::new(); capacities.len()];
        for f in (0..capacities.len()).rev() {
            let n = per_facility[f].len();
            p[f] = per_facility[f][i % n].clone();
            i /= n;
        }
        p
    };
    let table: Vec<(Vec<BTreeSet<usize>>, f64)> = mode.map_range(total, |i| {
        let p = decode(i);
        let v = evaluate(&p);
        (p, v)
    });
    let mut best = 0;
    for (i, (_, v)) in table.iter().enumerate() {
        if *v > table[best].1 {
            best = i;
        }
    }
    Ok(OracleResult {
        best: table[best].0.clone(),
        value: table[best].1,
        table,
    })
}

/// Per-user efficiency on a hit and on a miss, averaged over fading draws,
/// for a cache environment's frozen association. Expected reward is linear
/// in each facility's cached popularity mass.
#[derive(Clone, Debug)]
pub struct CacheRewardModel {
    facility_of: Vec<Option<usize>>,
    hit_ee: Vec<f64>,
    miss_ee: Vec<f64>,
    popularity: ZipfPopularity,
}

impl CacheRewardModel {
    pub fn estimate(env: &CacheEnv, draws: usize, seed: u64) -> Result<Self, EnvError> {
        let world = env.world();
        let cfg = world.config();
        let n = cfg.num_users();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = env.state().clone();
        let (mut hit_ee, mut miss_ee) = (vec![0.0; n], vec![0.0; n]);
        for _ in 0..draws {
            let ch = realize_channels(cfg, world.topology(), &mut rng)?;
            for (hit, acc) in [(true, &mut hit_ee), (false, &mut miss_ee)] {
                state.requests.hits = vec![hit; n];
                let m = system_metrics(&state, &ch, cfg);
                for (a, u) in acc.iter_mut().zip(&m.users) {
                    *a += u.ee;
                }
            }
        }
        let d = draws.max(1) as f64;
        hit_ee
            .iter_mut()
            .chain(miss_ee.iter_mut())
            .for_each(|x| *x /= d);
        let facility_of = (0..n)
            .map(|u| state.assoc.facility(u).map(|f| f.index(cfg.num_bs)))
            .collect();
        Ok(Self {
            facility_of,
            hit_ee,
            miss_ee,
            popularity: world.popularity().clone(),
        })
    }

    /// Expected system efficiency of a joint placement.
    pub fn expected_reward(&self, placement: &[BTreeSet<usize>]) -> f64 {
        self.facility_of
            .iter()
            .enumerate()
            .filter_map(|(u, f)| f.map(|f| (u, f)))
            .map(|(u, f)| {
                let q = self.popularity.mass(&placement[f]);
                self.miss_ee[u] + q * (self.hit_ee[u] - self.miss_ee[u])
            })
            .sum()
    }
}

/// Presents a multi-agent environment as a single agent that observes and
/// acts for everybody and receives the summed reward.
#[derive(Clone, Debug)]
pub struct CentralizedEnv<E> {
    inner: E,
}

impl<E: MultiAgentEnv> CentralizedEnv<E> {
    pub fn new(inner: E) -> Self {
        Self { inner }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Splits a joint action into the inner agents' actions.
    pub fn split(&self, action: &[f64]) -> Vec<Vec<f64>> {
        action
            .chunks(self.inner.action_layout().dim())
            .map(<[f64]>::to_vec)
            .collect()
    }
}

impl<E: MultiAgentEnv> MultiAgentEnv for CentralizedEnv<E> {
    fn num_agents(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        self.inner.num_agents() * self.inner.obs_dim()
    }

    fn action_layout(&self) -> ActionLayout {
        self.inner.action_layout().repeated(self.inner.num_agents())
    }

    fn episode_len(&self) -> usize {
        self.inner.episode_len()
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        vec![self.inner.reset(seed).concat()]
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult, EnvError> {
        if actions.len() != 1 {
            return Err(EnvError::AgentCount {
                expected: 1,
                got: actions.len(),
            });
        }
        let r = self.inner.step(&self.split(&actions[0]))?;
        Ok(StepResult {
            obs: vec![r.obs.concat()],
            rewards: vec![r.rewards.iter().sum()],
            done: r.done,
            info: r.info,
        })
    }

    fn describe_action(&self, action: &[f64]) -> String {
        self.split(action)
            .iter()
            .map(|a| self.inner.describe_action(a))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// The trainer with one centralized agent controlling every user (or
/// facility) at once.
pub fn ddpg_single<E: MultiAgentEnv>(
    env: E,
    cfg: TrainConfig,
) -> Result<Trainer<CentralizedEnv<E>>, TrainError> {
    Trainer::new(CentralizedEnv::new(env), cfg, Role::Central)
}
