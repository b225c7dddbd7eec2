//! The four learning schedulers — DQN, D3QN, QR-DQN, and QR-D3QN — built on
//! the value network in [`crate::valuenet`]: a uniform-sampling replay ring,
//! a linearly decaying ε-greedy exploration schedule, periodic hard target
//! synchronization, and per-variant TD target construction (scalar max /
//! double-Q targets for the N = 1 variants, quantile-wise bootstrapped
//! targets for the distributional ones).
//!
//! A nameable slot counter lives in the caller: `train_step(slot, …)` runs a
//! gradient update only once the buffer holds `min_fill` transitions, and the
//! target network is hard-copied whenever the *global* slot index is a
//! multiple of the sync period — both nested inside the fill guard.

use crate::valuenet::{
    argmax, mse_td_loss, quantile_huber_loss, tau_hat_midpoints, Adam, NetParams, NetShape,
    ValueNetError,
};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {message}")]
    InvalidConfig { message: String },
    #[error(transparent)]
    Net(#[from] ValueNetError),
    #[error("training step produced a non-finite loss")]
    NonFiniteLoss,
}

/// Which scheduler to train. The variants differ in three switches: head
/// resolution (N quantiles vs a scalar), dueling combination, and double
/// action selection for the bootstrap target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentVariant {
    /// Scalar Q head, no dueling, target net both selects and evaluates.
    Dqn,
    /// Scalar Q head, dueling streams, online net selects the next action.
    D3qn,
    /// Quantile head, no dueling, target net both selects and evaluates.
    QrDqn,
    /// Quantile head, dueling streams, online net selects the next action.
    QrD3qn,
}

impl AgentVariant {
    /// Value/advantage decomposition in the network head.
    pub fn dueling(self) -> bool {
        matches!(self, AgentVariant::D3qn | AgentVariant::QrD3qn)
    }

    /// Decoupled selection/evaluation in the bootstrap target.
    pub fn double(self) -> bool {
        matches!(self, AgentVariant::D3qn | AgentVariant::QrD3qn)
    }

    /// Quantiles per action: 64 for the distributional variants, 1 otherwise.
    pub fn default_quantiles(self) -> usize {
        match self {
            AgentVariant::Dqn | AgentVariant::D3qn => 1,
            AgentVariant::QrDqn | AgentVariant::QrD3qn => 64,
        }
    }

    /// Lower-case identifier used in CSV output and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            AgentVariant::Dqn => "dqn",
            AgentVariant::D3qn => "d3qn",
            AgentVariant::QrDqn => "qr_dqn",
            AgentVariant::QrD3qn => "qr_d3qn",
        }
    }
}

/// Training hyperparameters. [`AgentConfig::new`] fills the published
/// defaults; individual fields can be overridden before building an
/// [`Agent`] (smaller batches and buffers for constrained hardware, a
/// different N for resolution studies, and so on).
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub variant: AgentVariant,
    /// Discount factor γ.
    pub gamma: f64,
    /// Adam learning rate α.
    pub alpha: f64,
    /// Mini-batch size |B|.
    pub batch_size: usize,
    /// Quantiles per action (1 for the scalar variants).
    pub num_quantiles: usize,
    /// Hard target sync period G, counted in global slots.
    pub target_period: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Episode count over which ε decays linearly from start to end.
    pub eps_decay_episodes: u32,
    /// Training episodes E_max.
    pub episodes: u32,
    /// Slots per episode T_max.
    pub slots_per_episode: u32,
    /// Huber threshold κ for the quantile loss.
    pub kappa: f64,
    pub buffer_capacity: usize,
    /// Minimum stored transitions before gradient steps begin.
    pub min_fill: usize,
    /// Width of both hidden layers.
    pub hidden: usize,
}

impl AgentConfig {
    /// Published defaults: γ = 0.98, α = 2e-3, batch 256, G = 3, ε from 1.0
    /// to 0.05 over 1000 episodes, 3000 episodes of 100 slots, κ = 1,
    /// buffer 10⁶ with a 1000-transition floor, two hidden layers of 128.
    pub fn new(variant: AgentVariant) -> Self {
        Self {
            variant,
            gamma: 0.98,
            alpha: 2e-3,
            batch_size: 256,
            num_quantiles: variant.default_quantiles(),
            target_period: 3,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_episodes: 1000,
            episodes: 3000,
            slots_per_episode: 100,
            kappa: 1.0,
            buffer_capacity: 1_000_000,
            min_fill: 1000,
            hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |message: String| Err(AgentError::InvalidConfig { message });
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".to_string());
        }
        if self.num_quantiles == 0 {
            return fail("num_quantiles must be at least 1".to_string());
        }
        if !matches!(self.variant, AgentVariant::QrDqn | AgentVariant::QrD3qn)
            && self.num_quantiles != 1
        {
            return fail(format!(
                "variant {} uses a scalar head; num_quantiles must be 1, got {}",
                self.variant.name(),
                self.num_quantiles
            ));
        }
        if self.target_period == 0 {
            return fail("target_period must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.eps_end)
            || !(0.0..=1.0).contains(&self.eps_start)
            || self.eps_start < self.eps_end
        {
            return fail(format!(
                "exploration rates must satisfy 0 ≤ eps_end ≤ eps_start ≤ 1, got {} → {}",
                self.eps_start, self.eps_end
            ));
        }
        if self.eps_decay_episodes == 0 {
            return fail("eps_decay_episodes must be at least 1".to_string());
        }
        if !(self.kappa > 0.0) {
            return fail(format!("kappa must be positive, got {}", self.kappa));
        }
        if self.min_fill == 0 || self.buffer_capacity < self.min_fill {
            return fail(format!(
                "buffer_capacity ({}) must be at least min_fill ({}) and min_fill at least 1",
                self.buffer_capacity, self.min_fill
            ));
        }
        if self.hidden == 0 {
            return fail("hidden width must be at least 1".to_string());
        }
        Ok(())
    }
}

/// Exploration rate for a 1-based episode index: linear decay from
/// `eps_start` at episode 1 to `eps_end` at episode `eps_decay_episodes`,
/// constant afterwards.
pub fn epsilon(episode: u32, config: &AgentConfig) -> f64 {
    assert!(episode >= 1, "episodes are 1-based, got {episode}");
    if episode >= config.eps_decay_episodes {
        return config.eps_end;
    }
    let progress = (episode - 1) as f64 / (config.eps_decay_episodes - 1) as f64;
    config.eps_start - progress * (config.eps_start - config.eps_end)
}

/// One stored experience step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_features: Vec<f64>,
}

/// Fixed-capacity ring buffer with a uniform index sampler. Once full, each
/// push overwrites the oldest stored transition.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { data: Vec::new(), capacity, next: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(transition);
        } else {
            self.data[self.next] = transition;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.data[index]
    }

    /// `count` indices drawn independently and uniformly over the stored
    /// range (with replacement).
    pub fn sample_indices<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.data.is_empty(), "cannot sample from an empty buffer");
        (0..count).map(|_| rng.random_range(0..self.data.len())).collect()
    }
}

/// ε-greedy action choice: one uniform coin decides exploration (consumed
/// even at ε = 0, keeping the draw sequence deterministic), a second draw
/// picks the random action only on the explore branch; the greedy branch
/// takes the lowest-index argmax of mean-of-quantiles action values.
pub fn select_action<R: Rng + ?Sized>(
    net: &NetParams,
    features: &[f64],
    eps: f64,
    rng: &mut R,
) -> Result<usize, ValueNetError> {
    if rng.random::<f64>() < eps {
        return Ok(rng.random_range(0..net.shape.actions));
    }
    let q = net.forward(features)?;
    Ok(argmax(&q.mean_q()))
}

/// Scalar bootstrap target for the N = 1 variants:
/// plain → y = r + γ·max_a' Q_target(s', a');
/// double → y = r + γ·Q_target(s', argmax_a' Q_online(s', a')).
pub fn td_target(
    variant: AgentVariant,
    reward: f64,
    next_features: &[f64],
    online: &NetParams,
    target: &NetParams,
    gamma: f64,
) -> Result<f64, ValueNetError> {
    assert!(
        matches!(variant, AgentVariant::Dqn | AgentVariant::D3qn),
        "scalar TD targets apply to the N = 1 variants only"
    );
    let target_q = target.forward(next_features)?.mean_q();
    let next_action = if variant.double() {
        argmax(&online.forward(next_features)?.mean_q())
    } else {
        argmax(&target_q)
    };
    Ok(reward + gamma * target_q[next_action])
}

/// Quantile bootstrap targets: the selection net's mean-Q argmax picks a*,
/// then Tθ_j = r + γ·θ_j(s', a*) under the target net. Pass the online net
/// as `select` for double selection, or the target net itself for the
/// plain variant.
pub fn distributional_target(
    reward: f64,
    next_features: &[f64],
    select: &NetParams,
    target: &NetParams,
    gamma: f64,
) -> Result<Vec<f64>, ValueNetError> {
    let next_action = argmax(&select.forward(next_features)?.mean_q());
    let target_q = target.forward(next_features)?;
    Ok(target_q
        .action_quantiles(next_action)
        .iter()
        .map(|&theta| reward + gamma * theta)
        .collect())
}

/// One learning scheduler: online and target networks, optimizer state, and
/// the replay buffer.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    online: NetParams,
    target: NetParams,
    optimizer: Adam,
    pub buffer: ReplayBuffer,
    tau_hat: Vec<f64>,
}

impl Agent {
    /// Builds the networks for `num_features` inputs and `num_actions`
    /// outputs, drawing the initial weights from `rng`; the target network
    /// starts as an exact copy of the online one.
    pub fn new<R: Rng + ?Sized>(
        config: AgentConfig,
        num_features: usize,
        num_actions: usize,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        if num_features == 0 || num_actions == 0 {
            return Err(AgentError::InvalidConfig {
                message: "feature and action counts must be positive".to_string(),
            });
        }
        let shape = NetShape {
            input: num_features,
            hidden: config.hidden,
            actions: num_actions,
            quantiles: config.num_quantiles,
            dueling: config.variant.dueling(),
        };
        let online = NetParams::init(shape, rng);
        let target = online.clone();
        let optimizer = Adam::new(config.alpha, shape.param_count());
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        let tau_hat = tau_hat_midpoints(config.num_quantiles);
        Ok(Self { config, online, target, optimizer, buffer, tau_hat })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &NetParams {
        &self.online
    }

    pub fn target(&self) -> &NetParams {
        &self.target
    }

    /// Replaces the online network (checkpoint restore). The target network
    /// and optimizer moments are reset to match.
    pub fn load_online(&mut self, params: NetParams) -> Result<(), AgentError> {
        if params.shape != self.online.shape {
            return Err(AgentError::InvalidConfig {
                message: "checkpoint shape does not match the configured network".to_string(),
            });
        }
        self.online = params;
        self.target = self.online.clone();
        self.optimizer = Adam::new(self.config.alpha, self.online.shape.param_count());
        Ok(())
    }

    /// ε-greedy action under the online network.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        features: &[f64],
        eps: f64,
        rng: &mut R,
    ) -> Result<usize, AgentError> {
        Ok(select_action(&self.online, features, eps, rng)?)
    }

    /// Exploration rate for a 1-based episode index.
    pub fn epsilon(&self, episode: u32) -> f64 {
        epsilon(episode, &self.config)
    }

    pub fn store(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    /// Hard copy online → target.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// One slot of the learning loop, `slot` being the 1-based global slot
    /// index (continuous across episodes). Below the fill floor this is a
    /// no-op returning `None`. Otherwise: sample a batch, take one optimizer
    /// step on the batch-mean loss, then hard-sync the target network if
    /// `slot` is a multiple of the sync period. Returns the batch loss.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        slot: u64,
        rng: &mut R,
    ) -> Result<Option<f64>, AgentError> {
        if self.buffer.len() < self.config.min_fill {
            return Ok(None);
        }
        let indices = self.buffer.sample_indices(self.config.batch_size, rng);
        let loss = self.gradient_step(&indices)?;
        if slot % self.config.target_period == 0 {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    /// One optimizer step on the given replay indices (the deterministic
    /// core of [`Agent::train_step`]). The loss is the batch mean of
    /// per-transition losses — MSE of the TD error for scalar heads, the
    /// quantile Huber loss otherwise — and gradient flows only through the
    /// taken action's prediction.
    pub fn gradient_step(&mut self, indices: &[usize]) -> Result<f64, AgentError> {
        assert!(!indices.is_empty(), "gradient step needs at least one transition");
        let n = self.config.num_quantiles;
        let actions = self.online.shape.actions;
        let scale = 1.0 / indices.len() as f64;
        let mut grads = vec![0.0; self.online.shape.param_count()];
        let mut batch_loss = 0.0;
        let mut d_theta = vec![0.0; actions * n];

        for &index in indices {
            let tr = self.buffer.get(index);
            d_theta.iter_mut().for_each(|g| *g = 0.0);
            let (q, cache) = self.online.forward_cached(&tr.features)?;
            if n == 1 {
                let scalar_variant = if self.config.variant.double() {
                    AgentVariant::D3qn
                } else {
                    AgentVariant::Dqn
                };
                let y = td_target(
                    scalar_variant,
                    tr.reward,
                    &tr.next_features,
                    &self.online,
                    &self.target,
                    self.config.gamma,
                )?;
                let (loss, grad) = mse_td_loss(&[q.theta[tr.action]], &[y]);
                batch_loss += scale * loss;
                d_theta[tr.action] = scale * grad[0];
            } else {
                let select = if self.config.variant.double() { &self.online } else { &self.target };
                let targets = distributional_target(
                    tr.reward,
                    &tr.next_features,
                    select,
                    &self.target,
                    self.config.gamma,
                )?;
                let (loss, grad) = quantile_huber_loss(
                    q.action_quantiles(tr.action),
                    &targets,
                    &self.tau_hat,
                    self.config.kappa,
                );
                batch_loss += scale * loss;
                for (slot, g) in d_theta[tr.action * n..(tr.action + 1) * n]
                    .iter_mut()
                    .zip(&grad)
                {
                    *slot = scale * g;
                }
            }
            self.online.backward(&tr.features, &cache, &d_theta, &mut grads);
        }

        if !batch_loss.is_finite() {
            return Err(AgentError::NonFiniteLoss);
        }
        self.optimizer.step(&mut self.online, &grads)?;
        Ok(batch_loss)
    }
}
