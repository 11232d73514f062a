//! Multi-agent deterministic policy gradient with centralized critics.
//!
//! Every agent owns an actor that sees only its own observation and a
//! critic that sees the joint observation and the joint action. Critics
//! regress onto `r_i + γ Q'_i(x', μ'_1(o'_1), …, μ'_N(o'_N))` built from
//! target networks; actors ascend their critic through their own action
//! slot, with the other agents' actions taken from the replay sample.
//!
//! All agents share one minibatch per step. Target actions are computed
//! once, then each agent updates independently, so the per-agent work can
//! run in parallel without changing a single bit of the result.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ActionLayout, EnvError, MultiAgentEnv};
use crate::exec::ExecMode;
use crate::neural::{clip_grad_norm, Activation, AdamState, DenseNet, NeuralError, Trace};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("training diverged at episode {episode}: {detail}")]
    Diverged { episode: usize, detail: String },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Network(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub tau: f64,
    pub noise_init: f64,
    pub noise_floor: f64,
    /// Fraction of the episodes over which the noise decays to its floor.
    pub noise_decay_fraction: f64,
    pub hidden: Vec<usize>,
    pub grad_clip: f64,
    /// Rewards are multiplied by this before they reach the critics.
    pub reward_scale: f64,
    /// Weight of the penalty on the mean square of the actors' raw
    /// (pre-head) outputs.
    pub action_reg: f64,
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            steps_per_episode: 100,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.95,
            batch_size: 10,
            buffer_capacity: 50_000,
            tau: 0.01,
            noise_init: 0.3,
            noise_floor: 0.01,
            noise_decay_fraction: 0.6,
            hidden: vec![64, 64],
            grad_clip: 10.0,
            reward_scale: 1.0,
            action_reg: 1e-3,
            seed: 1,
            exec: ExecMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            v.push(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            v.push(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be positive".into());
        }
        if self.batch_size > self.buffer_capacity {
            v.push("batch_size must not exceed buffer_capacity".into());
        }
        if self.episodes == 0 || self.steps_per_episode == 0 {
            v.push("episodes and steps_per_episode must be positive".into());
        }
        for (name, x) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("grad_clip", self.grad_clip),
            ("reward_scale", self.reward_scale),
        ] {
            if !(x > 0.0) {
                v.push(format!("{name} must be positive"));
            }
        }
        if !(self.action_reg >= 0.0) {
            v.push("action_reg must be non-negative".into());
        }
        if !(self.noise_init >= 0.0 && self.noise_floor >= 0.0) {
            v.push("noise scales must be non-negative".into());
        }
        if !(self.noise_decay_fraction > 0.0 && self.noise_decay_fraction <= 1.0) {
            v.push("noise_decay_fraction must lie in (0, 1]".into());
        }
        if self.hidden.contains(&0) {
            v.push("hidden layer sizes must be positive".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(v))
        }
    }

    /// Exploration scale for a 0-based episode: exponential decay from
    /// `noise_init` to `noise_floor`, flat afterwards.
    pub fn noise_scale(&self, episode: usize) -> f64 {
        let horizon = (self.noise_decay_fraction * self.episodes as f64).max(1.0);
        let frac = (episode as f64 / horizon).min(1.0);
        if self.noise_init <= 0.0 || self.noise_floor <= 0.0 {
            return self.noise_init * (1.0 - frac) + self.noise_floor * frac;
        }
        self.noise_init * (self.noise_floor / self.noise_init).powf(frac)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Facility,
    /// One agent acting for everybody.
    Central,
}

/// Policy network plus a per-component output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub net: DenseNet,
    head: Vec<Activation>,
}

impl Actor {
    pub fn new(
        obs_dim: usize,
        hidden: &[usize],
        layout: &ActionLayout,
        rng: &mut impl Rng,
    ) -> Self {
        let net = DenseNet::mlp(
            obs_dim,
            hidden,
            layout.dim(),
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        Self {
            net,
            head: layout.expanded(),
        }
    }

    pub fn from_parts(net: DenseNet, head: Vec<Activation>) -> Self {
        assert_eq!(net.output_dim(), head.len());
        Self { net, head }
    }

    pub fn head(&self) -> &[Activation] {
        &self.head
    }

    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let raw = self.net.forward(obs)?;
        Ok(raw
            .iter()
            .zip(&self.head)
            .map(|(&z, a)| a.apply(z))
            .collect())
    }

    /// Actions for `rows` observations stacked row-major.
    pub fn act_batch(&self, obs: &[f64], rows: usize) -> Result<Vec<f64>, NeuralError> {
        let mut out = self.net.forward_batch(obs, rows)?;
        self.apply_head(&mut out);
        Ok(out)
    }

    fn apply_head(&self, raw: &mut [f64]) {
        for row in raw.chunks_exact_mut(self.head.len()) {
            for (z, a) in row.iter_mut().zip(&self.head) {
                *z = a.apply(*z);
            }
        }
    }

    fn act_trace(&self, obs: &[f64], rows: usize) -> Result<(Trace, Vec<f64>), NeuralError> {
        let trace = self.net.forward_batch_trace(obs, rows)?;
        let mut out = trace.output().to_vec();
        self.apply_head(&mut out);
        Ok((trace, out))
    }

    /// Accumulates the parameter gradient of `grad_action · action +
    /// reg · mean(raw²)`, stacked over the trace's rows.
    fn backward_into(
        &self,
        trace: &Trace,
        action: &[f64],
        grad_action: &[f64],
        reg: f64,
        grad: &mut [f64],
    ) -> Result<(), NeuralError> {
        let raw = trace.output();
        let heads = self.head.iter().cycle();
        let k = 2.0 * reg / raw.len() as f64;
        let upstream: Vec<f64> = grad_action
            .iter()
            .zip(heads.zip(raw.iter().zip(action)))
            .map(|(&g, (h, (&z, &a)))| g * h.derivative(z, a) + k * z)
            .collect();
        self.net.accumulate_param_grad(trace, &upstream, grad)
    }
}

/// Actor output plus zero-mean Gaussian noise of standard deviation
/// `noise_scale` on every component. Always consumes one normal draw per
/// component.
pub fn select_action(
    actor: &Actor,
    obs: &[f64],
    noise_scale: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, NeuralError> {
    let mut a = actor.act(obs)?;
    for x in &mut a {
        let z: f64 = rng.sample(StandardNormal);
        *x += noise_scale * z;
    }
    Ok(a)
}

/// `target ← τ·online + (1−τ)·target`, elementwise.
pub fn soft_update(target: &mut DenseNet, online: &DenseNet, tau: f64) -> Result<(), NeuralError> {
    if !target.same_shape(online) {
        return Err(NeuralError::ShapeMismatch);
    }
    for (t, &o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

/// Critic regression target `r + γ·q_next`.
pub fn critic_target(reward: f64, gamma: f64, q_next: f64) -> f64 {
    reward + gamma * q_next
}

/// One stored step, joint over all agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Concatenated per-agent observations.
    pub obs: Vec<f64>,
    /// Concatenated per-agent actions, as executed.
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Distinct uniform indices, or `None` while fewer than `batch` entries
    /// are stored.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
        if batch > self.items.len() {
            return None;
        }
        Some(sample_indices(rng, self.items.len(), batch).into_vec())
    }
}

/// Scalar function of critic inputs with its input gradient, evaluated on
/// `rows` inputs stacked row-major.
pub trait ActionValue {
    fn values_and_input_grads(
        &self,
        inputs: &[f64],
        rows: usize,
    ) -> Result<(Vec<f64>, Vec<f64>), NeuralError>;
}

impl ActionValue for DenseNet {
    fn values_and_input_grads(
        &self,
        inputs: &[f64],
        rows: usize,
    ) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
        let trace = self.forward_batch_trace(inputs, rows)?;
        let g = self.input_gradient(&trace, &vec![1.0; rows])?;
        Ok((trace.output().to_vec(), g))
    }
}

/// A sample as seen by one agent's actor update.
pub struct ActorSample<'a> {
    pub own_obs: &'a [f64],
    pub joint_obs: &'a [f64],
    pub joint_actions: &'a [f64],
}

/// Deterministic policy gradient of `-mean Q(x, a with slot ← μ(o))`, plus
/// `action_reg` times the mean squared raw actor output, with respect to the
/// actor parameters. Returns the gradient (for descent) and the mean Q.
pub fn actor_gradient(
    actor: &Actor,
    critic: &impl ActionValue,
    samples: &[ActorSample<'_>],
    slot: Range<usize>,
    action_reg: f64,
) -> Result<(Vec<f64>, f64), NeuralError> {
    let mut grad = vec![0.0; actor.net.num_params()];
    let rows = samples.len();
    if rows == 0 {
        return Ok((grad, 0.0));
    }
    let n = rows as f64;
    let own: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.own_obs.iter().copied())
        .collect();
    let (trace, a) = actor.act_trace(&own, rows)?;
    let width = samples[0].joint_obs.len() + samples[0].joint_actions.len();
    let mut inputs = Vec::with_capacity(rows * width);
    for (s, a) in samples.iter().zip(a.chunks_exact(slot.len())) {
        let off = inputs.len() + s.joint_obs.len();
        inputs.extend_from_slice(s.joint_obs);
        inputs.extend_from_slice(s.joint_actions);
        inputs[off + slot.start..off + slot.end].copy_from_slice(a);
    }
    if inputs.len() != rows * width {
        return Err(NeuralError::DimensionMismatch {
            expected: rows * width,
            got: inputs.len(),
        });
    }
    let (q, gin) = critic.values_and_input_grads(&inputs, rows)?;
    let off = samples[0].joint_obs.len();
    let ga: Vec<f64> = gin
        .chunks_exact(width)
        .flat_map(|g| g[off + slot.start..off + slot.end].iter().map(|g| -g / n))
        .collect();
    actor.backward_into(&trace, &a, &ga, action_reg, &mut grad)?;
    Ok((grad, q.iter().sum::<f64>() / n))
}

#[derive(Clone, Debug)]
pub struct AgentBundle {
    pub role: Role,
    pub index: usize,
    pub actor: Actor,
    pub critic: DenseNet,
    pub target_actor: Actor,
    pub target_critic: DenseNet,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    obs_dim: usize,
    action_dim: usize,
}

/// What one agent's update needs from the shared minibatch.
struct SharedBatch<'a> {
    samples: Vec<&'a Transition>,
    /// Joint target action at each sample's next observation.
    next_actions: Vec<Vec<f64>>,
}

impl SharedBatch<'_> {
    /// Stacked critic inputs at the current and at the next step.
    fn critic_inputs(&self) -> (Vec<f64>, Vec<f64>) {
        let width = self
            .samples
            .first()
            .map_or(0, |t| t.obs.len() + t.actions.len());
        let mut now = Vec::with_capacity(self.samples.len() * width);
        let mut next = Vec::with_capacity(self.samples.len() * width);
        for (t, a) in self.samples.iter().zip(&self.next_actions) {
            now.extend_from_slice(&t.obs);
            now.extend_from_slice(&t.actions);
            next.extend_from_slice(&t.next_obs);
            next.extend_from_slice(a);
        }
        (now, next)
    }
}

impl AgentBundle {
    /// Fresh agent `index` of `num_agents`; the critic sees the joint
    /// observation and joint action.
    pub fn new(
        role: Role,
        index: usize,
        num_agents: usize,
        obs_dim: usize,
        layout: &ActionLayout,
        cfg: &TrainConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let action_dim = layout.dim();
        let actor = Actor::new(obs_dim, &cfg.hidden, layout, rng);
        let critic_in = num_agents * (obs_dim + action_dim);
        let critic = DenseNet::mlp(
            critic_in,
            &cfg.hidden,
            1,
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        assert_eq!(
            critic.input_dim(),
            num_agents * obs_dim + num_agents * action_dim
        );
        Self {
            role,
            index,
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor_opt: AdamState::new(actor.net.num_params(), cfg.actor_lr),
            critic_opt: AdamState::new(critic.num_params(), cfg.critic_lr),
            actor,
            critic,
            obs_dim,
            action_dim,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// One critic regression step on an explicit batch; `next_actions`
    /// holds the joint target action for each sample. Returns the loss
    /// before the step.
    pub fn fit_critic(
        &mut self,
        samples: &[Transition],
        next_actions: Vec<Vec<f64>>,
        cfg: &TrainConfig,
    ) -> Result<f64, NeuralError> {
        let batch = SharedBatch {
            samples: samples.iter().collect(),
            next_actions,
        };
        self.critic_update(&batch, cfg)
    }

    fn obs_slot(&self) -> Range<usize> {
        self.index * self.obs_dim..(self.index + 1) * self.obs_dim
    }

    fn action_slot(&self) -> Range<usize> {
        self.index * self.action_dim..(self.index + 1) * self.action_dim
    }

    /// One Adam step of the critic on the batch. Returns the loss before the
    /// step.
    fn critic_update(
        &mut self,
        batch: &SharedBatch<'_>,
        cfg: &TrainConfig,
    ) -> Result<f64, NeuralError> {
        let rows = batch.samples.len();
        let n = rows as f64;
        let (now, next) = batch.critic_inputs();
        let q_next = self.target_critic.forward_batch(&next, rows)?;
        let trace = self.critic.forward_batch_trace(&now, rows)?;
        let mut loss = 0.0;
        let upstream: Vec<f64> = batch
            .samples
            .iter()
            .zip(q_next.iter().zip(trace.output()))
            .map(|(t, (&qn, &q))| {
                let y = critic_target(cfg.reward_scale * t.rewards[self.index], cfg.gamma, qn);
                loss += (q - y) * (q - y);
                2.0 * (q - y) / n
            })
            .collect();
        let mut grad = vec![0.0; self.critic.num_params()];
        self.critic
            .accumulate_param_grad(&trace, &upstream, &mut grad)?;
        clip_grad_norm(&mut grad, cfg.grad_clip);
        self.critic_opt.step(self.critic.params_mut(), &grad)?;
        Ok(loss / n)
    }

    /// One Adam step of the actor along the critic's action gradient.
    /// Returns the mean Q before the step.
    fn actor_update(
        &mut self,
        batch: &SharedBatch<'_>,
        cfg: &TrainConfig,
    ) -> Result<f64, NeuralError> {
        let obs_slot = self.obs_slot();
        let samples: Vec<ActorSample<'_>> = batch
            .samples
            .iter()
            .map(|t| ActorSample {
                own_obs: &t.obs[obs_slot.clone()],
                joint_obs: &t.obs,
                joint_actions: &t.actions,
            })
            .collect();
        let (mut grad, q) = actor_gradient(
            &self.actor,
            &self.critic,
            &samples,
            self.action_slot(),
            cfg.action_reg,
        )?;
        clip_grad_norm(&mut grad, cfg.grad_clip);
        self.actor_opt.step(self.actor.net.params_mut(), &grad)?;
        Ok(q)
    }

    fn update(
        &mut self,
        batch: &SharedBatch<'_>,
        cfg: &TrainConfig,
    ) -> Result<(f64, f64), NeuralError> {
        let c = self.critic_update(batch, cfg)?;
        let a = self.actor_update(batch, cfg)?;
        soft_update(&mut self.target_critic, &self.critic, cfg.tau)?;
        soft_update(&mut self.target_actor.net, &self.actor.net, cfg.tau)?;
        Ok((c, a))
    }

    fn is_finite(&self) -> bool {
        self.actor.net.is_finite() && self.critic.is_finite()
    }
}

/// Per-episode training record, one CSV row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Mean over the episode's steps of the system efficiency.
    pub mean_reward: f64,
    pub hit_rate: f64,
    /// Mean of `-Q` over the episode's actor updates.
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub noise_scale: f64,
}

pub struct Trainer<E> {
    env: E,
    agents: Vec<AgentBundle>,
    buffer: ReplayBuffer,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    episode: usize,
    violations: usize,
}

impl<E: MultiAgentEnv> Trainer<E> {
    pub fn new(env: E, cfg: TrainConfig, role: Role) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = env.num_agents();
        let layout = env.action_layout();
        let agents = (0..n)
            .map(|i| AgentBundle::new(role, i, n, env.obs_dim(), &layout, &cfg, &mut rng))
            .collect();
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            env,
            agents,
            cfg,
            rng,
            episode: 0,
            violations: 0,
        })
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn env_mut(&mut self) -> &mut E {
        &mut self.env
    }

    pub fn agents(&self) -> &[AgentBundle] {
        &self.agents
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Constraint violations reported by the environment during training.
    pub fn violations(&self) -> usize {
        self.violations
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Noise-free actions of every actor.
    pub fn greedy_actions(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NeuralError> {
        self.agents
            .iter()
            .zip(obs)
            .map(|(a, o)| a.actor.act(o))
            .collect()
    }

    pub fn noisy_actions(
        &mut self,
        obs: &[Vec<f64>],
        noise: f64,
    ) -> Result<Vec<Vec<f64>>, NeuralError> {
        self.agents
            .iter()
            .zip(obs)
            .map(|(a, o)| select_action(&a.actor, o, noise, &mut self.rng))
            .collect()
    }

    /// One shared-minibatch update of every agent, or `None` while the
    /// buffer holds fewer than a batch. Returns mean critic loss and mean Q.
    pub fn update(&mut self) -> Result<Option<(f64, f64)>, TrainError> {
        let Some(idx) = self.buffer.sample(self.cfg.batch_size, &mut self.rng) else {
            return Ok(None);
        };
        let samples: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect();
        let rows = samples.len();
        let mut next_actions: Vec<Vec<f64>> = samples
            .iter()
            .map(|t| Vec::with_capacity(t.actions.len()))
            .collect();
        for a in &self.agents {
            let obs: Vec<f64> = samples
                .iter()
                .flat_map(|t| t.next_obs[a.obs_slot()].iter().copied())
                .collect();
            let acts = a.target_actor.act_batch(&obs, rows)?;
            for (joint, act) in next_actions.iter_mut().zip(acts.chunks_exact(a.action_dim)) {
                joint.extend_from_slice(act);
            }
        }
        let batch = SharedBatch {
            samples,
            next_actions,
        };
        let cfg = &self.cfg;
        let results = cfg
            .exec
            .map_slice_mut(&mut self.agents, |_, agent| agent.update(&batch, cfg));
        let (mut closs, mut q) = (0.0, 0.0);
        for r in results {
            let (c, a) = r?;
            closs += c;
            q += a;
        }
        let n = self.agents.len() as f64;
        Ok(Some((closs / n, q / n)))
    }

    /// Runs one training episode.
    pub fn run_episode(&mut self) -> Result<EpisodeLog, TrainError> {
        let noise = self.cfg.noise_scale(self.episode);
        let seed: u64 = self.rng.random();
        let mut obs = self.env.reset(seed);
        let steps = self.cfg.steps_per_episode.min(self.env.episode_len());
        let (mut ee, mut hit) = (0.0, 0.0);
        let (mut closs, mut aloss, mut updates) = (0.0, 0.0, 0usize);
        for _ in 0..steps {
            let actions = self.noisy_actions(&obs, noise)?;
            let r = self.env.step(&actions)?;
            ee += r.info.system_ee;
            hit += r.info.hit_rate;
            self.violations += r.info.violations;
            self.buffer.push(Transition {
                obs: obs.concat(),
                actions: actions.concat(),
                rewards: r.rewards,
                next_obs: r.obs.concat(),
            });
            obs = r.obs;
            if let Some((c, q)) = self.update()? {
                if !c.is_finite() || !q.is_finite() {
                    return Err(TrainError::Diverged {
                        episode: self.episode + 1,
                        detail: format!("critic loss {c}, actor objective {q}"),
                    });
                }
                closs += c;
                aloss -= q;
                updates += 1;
            }
            if r.done {
                break;
            }
        }
        if let Some(a) = self.agents.iter().find(|a| !a.is_finite()) {
            return Err(TrainError::Diverged {
                episode: self.episode + 1,
                detail: format!("agent {} has non-finite parameters", a.index),
            });
        }
        self.episode += 1;
        let s = steps as f64;
        let u = updates.max(1) as f64;
        Ok(EpisodeLog {
            episode: self.episode,
            mean_reward: ee / s,
            hit_rate: hit / s,
            actor_loss: aloss / u,
            critic_loss: closs / u,
            noise_scale: noise,
        })
    }

    /// Runs the remaining configured episodes, handing each log to
    /// `on_episode`.
    pub fn train(
        &mut self,
        mut on_episode: impl FnMut(&EpisodeLog) -> Result<(), TrainError>,
    ) -> Result<Vec<EpisodeLog>, TrainError> {
        let mut logs = Vec::with_capacity(self.cfg.episodes.saturating_sub(self.episode));
        while self.episode < self.cfg.episodes {
            let log = self.run_episode()?;
            log::debug!(
                "episode {} reward {:.4} hit {:.3} critic {:.4}",
                log.episode,
                log.mean_reward,
                log.hit_rate,
                log.critic_loss
            );
            on_episode(&log)?;
            logs.push(log);
        }
        Ok(logs)
    }

    /// Writes actor and critic snapshots (online and target) plus a text
    /// manifest with the config hash, episode count and generator state.
    pub fn save_checkpoint(&self, dir: &Path, config_hash: &str) -> Result<(), TrainError> {
        fs::create_dir_all(dir)?;
        for a in &self.agents {
            for (name, net) in [
                ("actor", &a.actor.net),
                ("critic", &a.critic),
                ("target_actor", &a.target_actor.net),
                ("target_critic", &a.target_critic),
            ] {
                let f = fs::File::create(dir.join(format!("{name}_{}.bin", a.index)))?;
                net.write_snapshot(BufWriter::new(f))?;
            }
        }
        let rng = serde_json::to_string(&self.rng).map_err(std::io::Error::other)?;
        let manifest = format!(
            "config_hash={config_hash}\nepisode={}\nagents={}\nrng={rng}\n",
            self.episode,
            self.agents.len()
        );
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Restores networks, episode count and generator state written by
    /// [`Trainer::save_checkpoint`]. Optimizer moments restart from zero.
    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<(), TrainError> {
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let field = |key: &str| {
            manifest
                .lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| TrainError::BadCheckpoint(format!("missing {key}")))
        };
        let agents: usize = field("agents")?
            .parse()
            .map_err(|_| TrainError::BadCheckpoint("agents".into()))?;
        if agents != self.agents.len() {
            return Err(TrainError::BadCheckpoint(format!(
                "{agents} agents in checkpoint, trainer has {}",
                self.agents.len()
            )));
        }
        let episode = field("episode")?
            .parse()
            .map_err(|_| TrainError::BadCheckpoint("episode".into()))?;
        let rng: ChaCha8Rng = serde_json::from_str(field("rng")?)
            .map_err(|e| TrainError::BadCheckpoint(e.to_string()))?;
        let read = |name: &str, i: usize| -> Result<DenseNet, TrainError> {
            let f = fs::File::open(dir.join(format!("{name}_{i}.bin")))?;
            Ok(DenseNet::read_snapshot(BufReader::new(f))?)
        };
        for a in &mut self.agents {
            let loaded = [
                read("actor", a.index)?,
                read("critic", a.index)?,
                read("target_actor", a.index)?,
                read("target_critic", a.index)?,
            ];
            if !loaded[0].same_shape(&a.actor.net) || !loaded[1].same_shape(&a.critic) {
                return Err(TrainError::BadCheckpoint(format!(
                    "agent {} shape",
                    a.index
                )));
            }
            let [actor, critic, t_actor, t_critic] = loaded;
            a.actor.net = actor;
            a.critic = critic;
            a.target_actor.net = t_actor;
            a.target_critic = t_critic;
            a.actor_opt = AdamState::new(a.actor.net.num_params(), self.cfg.actor_lr);
            a.critic_opt = AdamState::new(a.critic.num_params(), self.cfg.critic_lr);
        }
        self.episode = episode;
        self.rng = rng;
        Ok(())
    }

    /// Replaces the replay buffer, for resuming from a serialized one.
    pub fn set_buffer(&mut self, buffer: ReplayBuffer) {
        self.buffer = buffer;
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }
}
