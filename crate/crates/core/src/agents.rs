//! Contextual-bandit versions of DQN, A2C and PPO plus a uniform baseline.
//!
//! Every interaction is a single-step episode, so the discount is zero:
//! the DQN regression target is the stored reward and the advantage used by
//! the actor-critic methods is `r - V(s)`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::matrix::argmax;
use crate::nn::{clip_joint_norm, Activation, AdamConfig, AdamState, GradientSet, Mlp, WeightInit};
use crate::rng::{derive_stream, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    A2c,
    Dqn,
    Ppo,
    Uniform,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::A2c => "a2c",
            Algorithm::Dqn => "dqn",
            Algorithm::Ppo => "ppo",
            Algorithm::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a2c" => Ok(Algorithm::A2c),
            "dqn" => Ok(Algorithm::Dqn),
            "ppo" => Ok(Algorithm::Ppo),
            "uniform" | "random" => Ok(Algorithm::Uniform),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnParams {
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub learning_starts: u64,
    pub train_freq: u64,
    pub exploration_initial: f64,
    pub exploration_final: f64,
    /// Fraction of `total_timesteps` over which epsilon decays linearly.
    pub exploration_fraction: f64,
    pub total_timesteps: u64,
    pub max_grad_norm: f64,
}

impl Default for DqnParams {
    fn default() -> Self {
        DqnParams {
            learning_rate: 1e-4,
            buffer_capacity: 50_000,
            batch_size: 32,
            learning_starts: 1_000,
            train_freq: 4,
            exploration_initial: 1.0,
            exploration_final: 0.05,
            exploration_fraction: 0.1,
            total_timesteps: 100_000,
            max_grad_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct A2cParams {
    pub learning_rate: f64,
    pub n_steps: usize,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for A2cParams {
    fn default() -> Self {
        A2cParams {
            learning_rate: 7e-4,
            n_steps: 5,
            vf_coef: 0.5,
            ent_coef: 0.0,
            max_grad_norm: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoParams {
    pub learning_rate: f64,
    pub n_steps: usize,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub clip_range: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
}

impl Default for PpoParams {
    fn default() -> Self {
        PpoParams {
            learning_rate: 3e-4,
            n_steps: 256,
            batch_size: 64,
            n_epochs: 10,
            clip_range: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.0,
            max_grad_norm: 0.5,
            normalize_advantage: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    /// Hidden layer widths shared by every network of the agent.
    pub hidden: Vec<usize>,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub seed: u64,
    pub dqn: DqnParams,
    pub a2c: A2cParams,
    pub ppo: PpoParams,
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm, hidden: Vec<usize>, obs_dim: usize, n_actions: usize, seed: u64) -> Self {
        AgentConfig {
            algorithm,
            hidden,
            obs_dim,
            n_actions,
            seed,
            dqn: DqnParams::default(),
            a2c: A2cParams::default(),
            ppo: PpoParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: &str| Err(Error::InvalidConfig(msg.to_owned()));
        if self.obs_dim == 0 || self.n_actions == 0 {
            return invalid("observation dim and action count must be positive");
        }
        if self.hidden.contains(&0) {
            return invalid("hidden widths must be positive");
        }
        let positive_rate = |lr: f64| lr.is_finite() && lr > 0.0;
        match self.algorithm {
            Algorithm::Uniform => {}
            Algorithm::Dqn => {
                let p = &self.dqn;
                if !positive_rate(p.learning_rate) {
                    return invalid("dqn learning rate must be positive");
                }
                if p.batch_size == 0 || p.buffer_capacity < p.batch_size || p.train_freq == 0 {
                    return invalid("dqn needs batch_size > 0, buffer_capacity >= batch_size, train_freq > 0");
                }
                for eps in [p.exploration_initial, p.exploration_final] {
                    if !(0.0..=1.0).contains(&eps) {
                        return invalid("dqn exploration rates must lie in [0, 1]");
                    }
                }
                if !(0.0..=1.0).contains(&p.exploration_fraction) || !(p.max_grad_norm > 0.0) {
                    return invalid("dqn exploration_fraction in [0, 1] and positive max_grad_norm required");
                }
            }
            Algorithm::A2c => {
                let p = &self.a2c;
                if !positive_rate(p.learning_rate) || p.n_steps == 0 || !(p.max_grad_norm > 0.0) {
                    return invalid("a2c needs positive learning rate, n_steps and max_grad_norm");
                }
                if p.vf_coef < 0.0 || p.ent_coef < 0.0 {
                    return invalid("a2c loss coefficients must be non-negative");
                }
            }
            Algorithm::Ppo => {
                let p = &self.ppo;
                if !positive_rate(p.learning_rate)
                    || p.n_steps == 0
                    || p.batch_size == 0
                    || p.n_epochs == 0
                    || !(p.max_grad_norm > 0.0)
                {
                    return invalid("ppo needs positive learning rate, n_steps, batch_size, n_epochs and max_grad_norm");
                }
                if !(p.clip_range > 0.0 && p.clip_range < 1.0) {
                    return invalid("ppo clip_range must lie in (0, 1)");
                }
                if p.vf_coef < 0.0 || p.ent_coef < 0.0 {
                    return invalid("ppo loss coefficients must be non-negative");
                }
            }
        }
        Ok(())
    }

    fn layer_sizes(&self, output: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.obs_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(output);
        sizes
    }
}

/// One bandit interaction as stored by an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    Applied,
    Skipped,
}

/// Per-sample record produced when instrumentation is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub reward: f64,
    /// DQN regression target.
    pub target: f64,
    pub advantage: f64,
    pub ratio: f64,
    pub objective: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub status: UpdateStatus,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub traces: Vec<SampleTrace>,
}

impl TrainStats {
    fn skipped() -> Self {
        TrainStats {
            status: UpdateStatus::Skipped,
            loss: 0.0,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            grad_norm: 0.0,
            clip_fraction: 0.0,
            traces: Vec::new(),
        }
    }

    fn applied() -> Self {
        TrainStats {
            status: UpdateStatus::Applied,
            ..TrainStats::skipped()
        }
    }
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - max - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

#[derive(Debug, Clone)]
struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }
}

#[derive(Debug, Clone)]
enum Learner {
    Uniform,
    Dqn {
        q: Mlp,
        opt: AdamState,
        buffer: ReplayBuffer,
    },
    ActorCritic {
        actor: Mlp,
        critic: Mlp,
        actor_opt: AdamState,
        critic_opt: AdamState,
        rollout: Vec<Transition>,
    },
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    learner: Learner,
    steps: u64,
    updates: u64,
    instrument: bool,
}

impl Agent {
    /// Build an agent. Networks are initialized from streams derived from
    /// `cfg.seed` (`"q"`, `"actor"`, `"critic"`).
    pub fn new(config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let hidden_act = match config.algorithm {
            Algorithm::Dqn => Activation::Relu,
            _ => Activation::Tanh,
        };
        let mut acts = vec![hidden_act; config.hidden.len()];
        acts.push(Activation::Linear);
        let init = WeightInit::FanInUniform { gain: 1.0 };
        let learner = match config.algorithm {
            Algorithm::Uniform => Learner::Uniform,
            Algorithm::Dqn => {
                let q = Mlp::init(
                    &config.layer_sizes(config.n_actions),
                    &acts,
                    init,
                    &mut derive_stream(config.seed, "q"),
                )?;
                let opt = AdamState::new(&q, AdamConfig::with_learning_rate(config.dqn.learning_rate));
                Learner::Dqn {
                    q,
                    opt,
                    buffer: ReplayBuffer {
                        capacity: config.dqn.buffer_capacity,
                        items: VecDeque::new(),
                    },
                }
            }
            Algorithm::A2c | Algorithm::Ppo => {
                let mut actor = Mlp::init(
                    &config.layer_sizes(config.n_actions),
                    &acts,
                    init,
                    &mut derive_stream(config.seed, "actor"),
                )?;
                // small initial logits keep the starting policy close to uniform
                if let Some(last) = actor.layers_mut().last_mut() {
                    last.weights_mut().iter_mut().for_each(|w| *w *= 0.01);
                    last.bias_mut().iter_mut().for_each(|b| *b = 0.0);
                }
                let critic = Mlp::init(
                    &config.layer_sizes(1),
                    &acts,
                    init,
                    &mut derive_stream(config.seed, "critic"),
                )?;
                let lr = if config.algorithm == Algorithm::A2c {
                    config.a2c.learning_rate
                } else {
                    config.ppo.learning_rate
                };
                Learner::ActorCritic {
                    actor_opt: AdamState::new(&actor, AdamConfig::with_learning_rate(lr)),
                    critic_opt: AdamState::new(&critic, AdamConfig::with_learning_rate(lr)),
                    actor,
                    critic,
                    rollout: Vec::new(),
                }
            }
        };
        Ok(Agent {
            config,
            learner,
            steps: 0,
            updates: 0,
            instrument: false,
        })
    }

    /// Rebuild an agent from saved networks and optimizer states, in the
    /// order reported by [`Agent::networks`]. Buffers start empty.
    pub fn restore(
        config: AgentConfig,
        networks: Vec<Mlp>,
        optimizers: Vec<AdamState>,
        steps: u64,
        updates: u64,
    ) -> Result<Self> {
        let mut agent = Agent::new(config)?;
        let expected = agent.networks().len();
        check_dim("checkpoint networks", expected, networks.len())?;
        check_dim("checkpoint optimizers", expected, optimizers.len())?;
        {
            let current = agent.networks();
            for ((_, have), new) in current.iter().zip(&networks) {
                let shapes = |n: &Mlp| {
                    n.layers()
                        .iter()
                        .map(|l| (l.in_dim(), l.out_dim(), l.activation()))
                        .collect::<Vec<_>>()
                };
                if shapes(have) != shapes(new) {
                    return Err(Error::InvalidConfig("checkpoint network shape does not match config".into()));
                }
            }
        }
        for (net, opt) in networks.iter().zip(&optimizers) {
            if !opt.first_moment.is_congruent(net) || !opt.second_moment.is_congruent(net) {
                return Err(Error::InvalidConfig("optimizer state does not match network".into()));
            }
        }
        let mut nets = networks.into_iter();
        let mut opts = optimizers.into_iter();
        match &mut agent.learner {
            Learner::Uniform => {}
            Learner::Dqn { q, opt, .. } => {
                *q = nets.next().expect("checked length");
                *opt = opts.next().expect("checked length");
            }
            Learner::ActorCritic {
                actor,
                critic,
                actor_opt,
                critic_opt,
                ..
            } => {
                *actor = nets.next().expect("checked length");
                *critic = nets.next().expect("checked length");
                *actor_opt = opts.next().expect("checked length");
                *critic_opt = opts.next().expect("checked length");
            }
        }
        agent.steps = steps;
        agent.updates = updates;
        Ok(agent)
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn algorithm(&self) -> Algorithm {
        self.config.algorithm
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Record per-sample traces in [`TrainStats::traces`].
    pub fn set_instrumentation(&mut self, on: bool) {
        self.instrument = on;
    }

    /// Named networks in checkpoint order.
    pub fn networks(&self) -> Vec<(&'static str, &Mlp)> {
        match &self.learner {
            Learner::Uniform => Vec::new(),
            Learner::Dqn { q, .. } => vec![("q", q)],
            Learner::ActorCritic { actor, critic, .. } => vec![("actor", actor), ("critic", critic)],
        }
    }

    pub fn optimizers(&self) -> Vec<&AdamState> {
        match &self.learner {
            Learner::Uniform => Vec::new(),
            Learner::Dqn { opt, .. } => vec![opt],
            Learner::ActorCritic {
                actor_opt, critic_opt, ..
            } => vec![actor_opt, critic_opt],
        }
    }

    pub fn q_network_mut(&mut self) -> Option<&mut Mlp> {
        match &mut self.learner {
            Learner::Dqn { q, .. } => Some(q),
            _ => None,
        }
    }

    pub fn actor_mut(&mut self) -> Option<&mut Mlp> {
        match &mut self.learner {
            Learner::ActorCritic { actor, .. } => Some(actor),
            _ => None,
        }
    }

    pub fn critic_mut(&mut self) -> Option<&mut Mlp> {
        match &mut self.learner {
            Learner::ActorCritic { critic, .. } => Some(critic),
            _ => None,
        }
    }

    /// Number of stored transitions (replay buffer or current rollout).
    pub fn buffered(&self) -> usize {
        match &self.learner {
            Learner::Uniform => 0,
            Learner::Dqn { buffer, .. } => buffer.items.len(),
            Learner::ActorCritic { rollout, .. } => rollout.len(),
        }
    }

    /// Oldest transition still held by the agent.
    pub fn oldest_transition(&self) -> Option<&Transition> {
        match &self.learner {
            Learner::Uniform => None,
            Learner::Dqn { buffer, .. } => buffer.items.front(),
            Learner::ActorCritic { rollout, .. } => rollout.first(),
        }
    }

    /// Current DQN exploration rate (linear decay, then constant).
    pub fn epsilon(&self) -> f64 {
        let p = &self.config.dqn;
        let horizon = p.exploration_fraction * p.total_timesteps as f64;
        if horizon <= 0.0 {
            return p.exploration_final;
        }
        let progress = self.steps as f64 / horizon;
        if progress >= 1.0 {
            return p.exploration_final;
        }
        p.exploration_initial + progress * (p.exploration_final - p.exploration_initial)
    }

    /// Raw network output driving action choice: Q values or actor logits.
    pub fn action_scores(&self, obs: &[f64]) -> Result<Option<Vec<f64>>> {
        check_dim("observation", self.config.obs_dim, obs.len())?;
        let scores = match &self.learner {
            Learner::Uniform => return Ok(None),
            Learner::Dqn { q, .. } => q.predict(obs)?,
            Learner::ActorCritic { actor, .. } => actor.predict(obs)?,
        };
        ensure_finite(&scores, "network output")?;
        Ok(Some(scores))
    }

    /// Action probabilities of the actor (A2C/PPO only).
    pub fn action_probabilities(&self, obs: &[f64]) -> Result<Option<Vec<f64>>> {
        match &self.learner {
            Learner::ActorCritic { .. } => Ok(self.action_scores(obs)?.map(|l| softmax(&l))),
            _ => Ok(None),
        }
    }

    pub fn act(&self, obs: &[f64], rng: &mut RngStream, explore: bool) -> Result<usize> {
        let n = self.config.n_actions;
        let scores = self.action_scores(obs)?;
        let action = match (&self.learner, scores) {
            (Learner::Dqn { .. }, Some(q)) => {
                if explore && rng.uniform() < self.epsilon() {
                    rng.below(n)
                } else {
                    argmax(&q)
                }
            }
            (Learner::ActorCritic { .. }, Some(logits)) => {
                if explore {
                    rng.categorical(&softmax(&logits))
                } else {
                    argmax(&logits)
                }
            }
            _ => rng.below(n),
        };
        debug_assert!(action < n);
        Ok(action)
    }

    pub fn observe(&mut self, t: Transition) -> Result<()> {
        check_dim("observation", self.config.obs_dim, t.observation.len())?;
        if t.action >= self.config.n_actions {
            return Err(Error::IndexOutOfRange {
                index: t.action,
                limit: self.config.n_actions,
            });
        }
        if !(-1.0..=1.0).contains(&t.reward) {
            return Err(Error::InvalidConfig(format!("reward {} outside [-1, 1]", t.reward)));
        }
        self.steps += 1;
        match &mut self.learner {
            Learner::Uniform => {}
            Learner::Dqn { buffer, .. } => buffer.push(t),
            Learner::ActorCritic { rollout, .. } => rollout.push(t),
        }
        Ok(())
    }

    /// Whether [`Agent::update`] would do work now.
    pub fn ready(&self) -> bool {
        match &self.learner {
            Learner::Uniform => false,
            Learner::Dqn { buffer, .. } => {
                let p = &self.config.dqn;
                self.steps >= p.learning_starts
                    && buffer.items.len() >= p.batch_size
                    && self.steps.is_multiple_of(p.train_freq)
            }
            Learner::ActorCritic { rollout, .. } => {
                let n = match self.config.algorithm {
                    Algorithm::A2c => self.config.a2c.n_steps,
                    _ => self.config.ppo.n_steps,
                };
                rollout.len() >= n
            }
        }
    }

    pub fn update(&mut self, rng: &mut RngStream) -> Result<TrainStats> {
        if !self.ready() {
            return Ok(TrainStats::skipped());
        }
        let instrument = self.instrument;
        let stats = match (&mut self.learner, self.config.algorithm) {
            (Learner::Dqn { q, opt, buffer }, _) => {
                dqn_update(q, opt, buffer, &self.config.dqn, rng, instrument)?
            }
            (
                Learner::ActorCritic {
                    actor,
                    critic,
                    actor_opt,
                    critic_opt,
                    rollout,
                },
                algorithm,
            ) => {
                let batch = std::mem::take(rollout);
                let mut nets = ActorCriticNets {
                    actor,
                    critic,
                    actor_opt,
                    critic_opt,
                };
                if algorithm == Algorithm::A2c {
                    a2c_update(&mut nets, &batch, &self.config.a2c, instrument)?
                } else {
                    ppo_update(&mut nets, &batch, &self.config.ppo, rng, instrument)?
                }
            }
            (Learner::Uniform, _) => return Ok(TrainStats::skipped()),
        };
        if !stats.loss.is_finite() {
            return Err(Error::Aborted(format!(
                "non-finite loss after {} updates (policy {}, value {})",
                self.updates, stats.policy_loss, stats.value_loss
            )));
        }
        self.updates += 1;
        Ok(stats)
    }
}

fn dqn_update(
    q: &mut Mlp,
    opt: &mut AdamState,
    buffer: &ReplayBuffer,
    params: &DqnParams,
    rng: &mut RngStream,
    instrument: bool,
) -> Result<TrainStats> {
    let batch = params.batch_size;
    let scale = 1.0 / batch as f64;
    let mut grads = GradientSet::zeros_like(q);
    let mut stats = TrainStats::applied();
    for _ in 0..batch {
        let t = &buffer.items[rng.below(buffer.items.len())];
        let (values, cache) = q.forward(&t.observation)?;
        ensure_finite(&values, "q values")?;
        // zero discount: the regression target is the reward itself
        let target = t.reward;
        let diff = values[t.action] - target;
        stats.loss += diff * diff * scale;
        let mut out_grad = vec![0.0; values.len()];
        out_grad[t.action] = 2.0 * diff * scale;
        grads.add_scaled(&q.backward(&cache, &out_grad)?, 1.0);
        if instrument {
            stats.traces.push(SampleTrace {
                reward: t.reward,
                target,
                advantage: 0.0,
                ratio: 1.0,
                objective: -diff * diff,
                clipped: false,
            });
        }
    }
    stats.value_loss = stats.loss;
    stats.grad_norm = clip_joint_norm(&mut [&mut grads], params.max_grad_norm);
    opt.step(q, &grads)?;
    Ok(stats)
}

struct ActorCriticNets<'a> {
    actor: &'a mut Mlp,
    critic: &'a mut Mlp,
    actor_opt: &'a mut AdamState,
    critic_opt: &'a mut AdamState,
}

/// Entropy of `probs` and its gradient with respect to the logits.
fn entropy_and_grad(probs: &[f64], log_probs: &[f64]) -> (f64, Vec<f64>) {
    let h = -probs.iter().zip(log_probs).map(|(p, lp)| p * lp).sum::<f64>();
    let grad = probs
        .iter()
        .zip(log_probs)
        .map(|(p, lp)| -p * (lp + h))
        .collect();
    (h, grad)
}

/// Critic forward/backward for the loss `coef * (V(s) - r)^2 * scale`.
fn value_step(
    critic: &Mlp,
    t: &Transition,
    coef: f64,
    scale: f64,
    grads: &mut GradientSet,
) -> Result<f64> {
    let (v, cache) = critic.forward(&t.observation)?;
    ensure_finite(&v, "value estimate")?;
    let diff = v[0] - t.reward;
    grads.add_scaled(&critic.backward(&cache, &[2.0 * coef * diff * scale])?, 1.0);
    Ok(diff * diff * scale)
}

fn apply_actor_critic(
    nets: &mut ActorCriticNets<'_>,
    mut actor_grads: GradientSet,
    mut critic_grads: GradientSet,
    max_grad_norm: f64,
) -> Result<f64> {
    let norm = clip_joint_norm(&mut [&mut actor_grads, &mut critic_grads], max_grad_norm);
    nets.actor_opt.step(nets.actor, &actor_grads)?;
    nets.critic_opt.step(nets.critic, &critic_grads)?;
    Ok(norm)
}

fn a2c_update(
    nets: &mut ActorCriticNets<'_>,
    batch: &[Transition],
    params: &A2cParams,
    instrument: bool,
) -> Result<TrainStats> {
    let scale = 1.0 / batch.len() as f64;
    let mut actor_grads = GradientSet::zeros_like(nets.actor);
    let mut critic_grads = GradientSet::zeros_like(nets.critic);
    let mut stats = TrainStats::applied();
    for t in batch {
        let value = nets.critic.predict(&t.observation)?[0];
        let advantage = t.reward - value;
        let (logits, cache) = nets.actor.forward(&t.observation)?;
        ensure_finite(&logits, "actor logits")?;
        let log_probs = log_softmax(&logits);
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let (entropy, entropy_grad) = entropy_and_grad(&probs, &log_probs);
        // loss = -log pi(a|s) * A - ent_coef * H
        let mut out_grad: Vec<f64> = probs.iter().map(|p| advantage * p * scale).collect();
        out_grad[t.action] -= advantage * scale;
        for (g, eg) in out_grad.iter_mut().zip(&entropy_grad) {
            *g -= params.ent_coef * eg * scale;
        }
        actor_grads.add_scaled(&nets.actor.backward(&cache, &out_grad)?, 1.0);
        stats.policy_loss -= log_probs[t.action] * advantage * scale;
        stats.entropy += entropy * scale;
        stats.value_loss += value_step(nets.critic, t, params.vf_coef, scale, &mut critic_grads)?;
        if instrument {
            stats.traces.push(SampleTrace {
                reward: t.reward,
                target: t.reward,
                advantage,
                ratio: 1.0,
                objective: log_probs[t.action] * advantage,
                clipped: false,
            });
        }
    }
    stats.loss = stats.policy_loss + params.vf_coef * stats.value_loss - params.ent_coef * stats.entropy;
    stats.grad_norm = apply_actor_critic(nets, actor_grads, critic_grads, params.max_grad_norm)?;
    Ok(stats)
}

/// Result of evaluating the clipped surrogate on one minibatch.
#[derive(Debug, Clone)]
pub struct SurrogateGradient {
    pub gradient: GradientSet,
    /// Mean clipped surrogate objective (to be maximized).
    pub objective: f64,
    pub entropy: f64,
    pub traces: Vec<SampleTrace>,
}

/// Gradient of the loss `-mean(min(rho A, clip(rho, 1-eps, 1+eps) A)) - ent_coef * H`
/// with respect to the actor parameters. `clip_range = None` gives the
/// unclipped policy-gradient surrogate `-mean(rho A)`.
pub fn ppo_surrogate_gradient(
    actor: &Mlp,
    batch: &[&Transition],
    old_log_probs: &[f64],
    advantages: &[f64],
    clip_range: Option<f64>,
    ent_coef: f64,
) -> Result<SurrogateGradient> {
    check_dim("old log probs", batch.len(), old_log_probs.len())?;
    check_dim("advantages", batch.len(), advantages.len())?;
    let scale = 1.0 / batch.len() as f64;
    let mut gradient = GradientSet::zeros_like(actor);
    let mut objective = 0.0;
    let mut entropy_total = 0.0;
    let mut traces = Vec::with_capacity(batch.len());
    for ((t, &old), &adv) in batch.iter().zip(old_log_probs).zip(advantages) {
        let (logits, cache) = actor.forward(&t.observation)?;
        ensure_finite(&logits, "actor logits")?;
        let log_probs = log_softmax(&logits);
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let ratio = (log_probs[t.action] - old).exp();
        let unclipped = ratio * adv;
        let (sample_objective, clipped) = match clip_range {
            Some(eps) => {
                let bounded = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
                if bounded < unclipped {
                    (bounded, true)
                } else {
                    (unclipped, false)
                }
            }
            None => (unclipped, false),
        };
        objective += sample_objective * scale;
        let (entropy, entropy_grad) = entropy_and_grad(&probs, &log_probs);
        entropy_total += entropy * scale;
        // d(rho)/d(logits) = rho * (onehot(a) - pi); the clipped branch is flat
        let mut out_grad: Vec<f64> = if clipped {
            vec![0.0; probs.len()]
        } else {
            probs.iter().map(|p| adv * ratio * p * scale).collect()
        };
        if !clipped {
            out_grad[t.action] -= adv * ratio * scale;
        }
        if ent_coef != 0.0 {
            for (g, eg) in out_grad.iter_mut().zip(&entropy_grad) {
                *g -= ent_coef * eg * scale;
            }
        }
        if out_grad.iter().any(|&g| g != 0.0) {
            gradient.add_scaled(&actor.backward(&cache, &out_grad)?, 1.0);
        }
        traces.push(SampleTrace {
            reward: t.reward,
            target: t.reward,
            advantage: adv,
            ratio,
            objective: sample_objective,
            clipped,
        });
    }
    Ok(SurrogateGradient {
        gradient,
        objective,
        entropy: entropy_total,
        traces,
    })
}

fn ppo_update(
    nets: &mut ActorCriticNets<'_>,
    batch: &[Transition],
    params: &PpoParams,
    rng: &mut RngStream,
    instrument: bool,
) -> Result<TrainStats> {
    // snapshot of the behaviour policy and critic before any step
    let mut old_log_probs = Vec::with_capacity(batch.len());
    let mut advantages = Vec::with_capacity(batch.len());
    for t in batch {
        let logits = nets.actor.predict(&t.observation)?;
        ensure_finite(&logits, "actor logits")?;
        old_log_probs.push(log_softmax(&logits)[t.action]);
        advantages.push(t.reward - nets.critic.predict(&t.observation)?[0]);
    }
    let mut stats = TrainStats::applied();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut minibatches = 0usize;
    let mut clipped = 0usize;
    let mut seen = 0usize;
    for _ in 0..params.n_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(params.batch_size) {
            let samples: Vec<&Transition> = chunk.iter().map(|&i| &batch[i]).collect();
            let old: Vec<f64> = chunk.iter().map(|&i| old_log_probs[i]).collect();
            let mut adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            if params.normalize_advantage && adv.len() > 1 {
                let mean = adv.iter().sum::<f64>() / adv.len() as f64;
                let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (adv.len() - 1) as f64;
                let std = var.sqrt() + 1e-8;
                adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
            }
            let surrogate = ppo_surrogate_gradient(
                nets.actor,
                &samples,
                &old,
                &adv,
                Some(params.clip_range),
                params.ent_coef,
            )?;
            let scale = 1.0 / samples.len() as f64;
            let mut critic_grads = GradientSet::zeros_like(nets.critic);
            let mut value_loss = 0.0;
            for t in &samples {
                value_loss += value_step(nets.critic, t, params.vf_coef, scale, &mut critic_grads)?;
            }
            clipped += surrogate.traces.iter().filter(|t| t.clipped).count();
            seen += samples.len();
            stats.policy_loss -= surrogate.objective;
            stats.value_loss += value_loss;
            stats.entropy += surrogate.entropy;
            stats.grad_norm =
                apply_actor_critic(nets, surrogate.gradient, critic_grads, params.max_grad_norm)?;
            if instrument {
                stats.traces.extend(surrogate.traces);
            }
            minibatches += 1;
        }
    }
    let m = minibatches.max(1) as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.clip_fraction = clipped as f64 / seen.max(1) as f64;
    stats.loss = stats.policy_loss + params.vf_coef * stats.value_loss - params.ent_coef * stats.entropy;
    Ok(stats)
}
