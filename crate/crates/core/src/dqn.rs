//! Double dueling DQN with uniform experience replay.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, LayerGrad, OptimizerState};
use crate::router::{HeadKind, ObservationMode, RouterNetwork};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episode budget over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Learn steps between target-network syncs.
    pub target_sync_interval: usize,
    pub episodes: usize,
    /// Transitions collected before the first learn step.
    pub warmup_transitions: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            learning_rate: 1e-3,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.4,
            replay_capacity: 50_000,
            batch_size: 64,
            target_sync_interval: 1_000,
            episodes: 50_000,
            warmup_transitions: 1_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        for eps in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::Config("epsilon values must lie in [0, 1]".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return Err(Error::Config("epsilon_decay_fraction must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Config("replay capacity must be at least the (positive) batch size".into()));
        }
        if self.target_sync_interval == 0 {
            return Err(Error::Config("target_sync_interval must be positive".into()));
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`, then constant.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let decay_episodes = self.epsilon_decay_fraction * self.episodes as f64;
        if decay_episodes <= 0.0 {
            return self.epsilon_end;
        }
        let progress = (episode as f64 / decay_episodes).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * progress
    }
}

/// Fixed-capacity FIFO ring buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayMemory<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
}

impl<T> ReplayMemory<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory { items: Vec::with_capacity(capacity.min(1 << 16)), capacity, next: 0 }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `count` draws, uniform with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<&T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..count).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_observation: Observation,
    pub done: bool,
    pub next_mask: Vec<bool>,
}

pub fn q_values(net: &RouterNetwork, obs: &Observation, mode: ObservationMode) -> Result<Vec<f64>> {
    let pass = net.forward_batch(&[obs], mode)?;
    Ok(pass.q_values().row(0).to_vec())
}

/// Argmax over valid actions; ties go to the lowest index.
pub fn greedy_action(q: &[f64], mask: &[bool]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (a, (&v, &valid)) in q.iter().zip(mask).enumerate() {
        if valid && best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    best.map(|(a, _)| a).ok_or_else(|| Error::Contract("no valid action".into()))
}

pub fn uniform_valid_action<R: Rng + ?Sized>(mask: &[bool], rng: &mut R) -> Result<usize> {
    let valid: Vec<usize> = mask.iter().enumerate().filter(|(_, &v)| v).map(|(a, _)| a).collect();
    if valid.is_empty() {
        return Err(Error::Contract("no valid action".into()));
    }
    Ok(valid[rng.random_range(0..valid.len())])
}

/// ε-greedy over the valid actions.
pub fn select_action<R: Rng + ?Sized>(
    net: &RouterNetwork,
    obs: &Observation,
    mask: &[bool],
    epsilon: f64,
    mode: ObservationMode,
    rng: &mut R,
) -> Result<usize> {
    if !mask.iter().any(|&v| v) {
        return Err(Error::Contract("no valid action".into()));
    }
    if rng.random::<f64>() < epsilon {
        return uniform_valid_action(mask, rng);
    }
    greedy_action(&q_values(net, obs, mode)?, mask)
}

/// Tabular form of the Q-learning update:
/// `Q ← Q + α·(r + γ·max Q' − Q)`, with the bootstrap term dropped at episode end.
pub fn tabular_q_update(q: f64, alpha: f64, reward: f64, gamma: f64, next_max: Option<f64>) -> f64 {
    let target = reward + next_max.map_or(0.0, |m| gamma * m);
    q + alpha * (target - q)
}

/// Double-DQN targets: the online network picks the best valid next
/// action, the target network evaluates it.
pub fn double_q_targets(
    online: &RouterNetwork,
    target: &RouterNetwork,
    batch: &[&Transition],
    gamma: f64,
    mode: ObservationMode,
) -> Result<Vec<f64>> {
    let mut targets: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let live: Vec<usize> =
        (0..batch.len()).filter(|&i| !batch[i].done && batch[i].next_mask.iter().any(|&v| v)).collect();
    if live.is_empty() || gamma == 0.0 {
        return Ok(targets);
    }
    let next: Vec<&Observation> = live.iter().map(|&i| &batch[i].next_observation).collect();
    let q_online = online.forward_batch(&next, mode)?.q_values();
    let q_target = target.forward_batch(&next, mode)?.q_values();
    for (k, &i) in live.iter().enumerate() {
        let best = greedy_action(q_online.row(k).as_slice().unwrap(), &batch[i].next_mask)?;
        targets[i] += gamma * q_target[[k, best]];
    }
    Ok(targets)
}

/// Mean squared TD error and its gradient w.r.t. the online parameters.
pub fn td_loss_and_grads(
    online: &RouterNetwork,
    target: &RouterNetwork,
    batch: &[&Transition],
    gamma: f64,
    mode: ObservationMode,
) -> Result<(f64, Vec<LayerGrad>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let targets = double_q_targets(online, target, batch, gamma, mode)?;
    let obs: Vec<&Observation> = batch.iter().map(|t| &t.observation).collect();
    let pass = online.forward_batch(&obs, mode)?;
    let q = pass.q_values();
    let n = batch.len() as f64;
    let mut d_q = Array2::<f64>::zeros(q.raw_dim());
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let err = q[[i, t.action]] - targets[i];
        loss += err * err / n;
        d_q[[i, t.action]] = 2.0 * err / n;
    }
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("TD loss is {loss}")));
    }
    Ok((loss, online.backward_q(&pass, &d_q)))
}

pub fn td_loss(
    online: &RouterNetwork,
    target: &RouterNetwork,
    batch: &[&Transition],
    gamma: f64,
    mode: ObservationMode,
) -> Result<f64> {
    let targets = double_q_targets(online, target, batch, gamma, mode)?;
    let obs: Vec<&Observation> = batch.iter().map(|t| &t.observation).collect();
    let q = online.forward_batch(&obs, mode)?.q_values();
    Ok(batch.iter().enumerate().map(|(i, t)| (q[[i, t.action]] - targets[i]).powi(2)).sum::<f64>() / batch.len() as f64)
}

/// One optimizer step on the mean squared TD error; returns the loss.
pub fn learn_step(
    online: &mut RouterNetwork,
    target: &RouterNetwork,
    optimizer: &mut OptimizerState,
    batch: &[&Transition],
    gamma: f64,
    mode: ObservationMode,
) -> Result<f64> {
    let (loss, grads) = td_loss_and_grads(online, target, batch, gamma, mode)?;
    optimizer.step(online, &grads)?;
    Ok(loss)
}

pub fn sync_target(online: &RouterNetwork, target: &mut RouterNetwork) {
    target.clone_from(online);
}

/// Online and target networks, optimizer state and replay memory of one run.
#[derive(Clone, Debug)]
pub struct DqnAgent {
    pub online: RouterNetwork,
    pub target: RouterNetwork,
    pub optimizer: OptimizerState,
    pub replay: ReplayMemory<Transition>,
    pub config: AgentConfig,
    pub mode: ObservationMode,
    learn_steps: usize,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(
        expert_dims: &[usize],
        obs_dim: usize,
        config: AgentConfig,
        mode: ObservationMode,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let online = RouterNetwork::new(expert_dims, obs_dim, HeadKind::Dueling, rng)?;
        let target = online.clone();
        let optimizer =
            OptimizerState::new(&online, AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() })?;
        let replay = ReplayMemory::new(config.replay_capacity);
        Ok(DqnAgent { online, target, optimizer, replay, config, mode, learn_steps: 0 })
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, mask: &[bool], epsilon: f64, rng: &mut R) -> Result<usize> {
        select_action(&self.online, obs, mask, epsilon, self.mode, rng)
    }

    pub fn remember(&mut self, transition: Transition) {
        self.replay.push(transition);
    }

    pub fn learn_steps(&self) -> usize {
        self.learn_steps
    }

    /// Samples a batch and learns once the warm-up is over; syncs the target
    /// network every `target_sync_interval` learn steps.
    pub fn maybe_learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        if self.replay.len() < self.config.warmup_transitions.max(self.config.batch_size) {
            return Ok(None);
        }
        let batch = self.replay.sample(self.config.batch_size, rng);
        let loss = learn_step(&mut self.online, &self.target, &mut self.optimizer, &batch, self.config.gamma, self.mode)?;
        self.learn_steps += 1;
        if self.learn_steps % self.config.target_sync_interval == 0 {
            sync_target(&self.online, &mut self.target);
        }
        Ok(Some(loss))
    }
}
