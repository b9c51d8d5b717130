//! The routing episode: start from the initial expert's embedding, then
//! either activate another expert (paying a cost reward) or classify.
//!
//! Action indices are laid out as `[Classify(0), Classify(1), Activate(0), …,
//! Activate(E-1)]`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bank::{total_cost, EmbeddingBank, ExpertSpec};
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Classify(u8),
    Activate(usize),
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Classify(label) => label as usize,
            Action::Activate(expert) => NUM_CLASSES + expert,
        }
    }

    pub fn from_index(index: usize, num_experts: usize) -> Result<Action> {
        if index < NUM_CLASSES {
            Ok(Action::Classify(index as u8))
        } else if index < NUM_CLASSES + num_experts {
            Ok(Action::Activate(index - NUM_CLASSES))
        } else {
            Err(Error::Contract(format!("action index {index} out of range")))
        }
    }
}

pub fn num_actions(num_experts: usize) -> usize {
    NUM_CLASSES + num_experts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    /// λ, the weight on the expert cost reward.
    pub cost_coefficient: f64,
    pub initial_expert: usize,
    pub obs_dim: usize,
    /// Maximum number of decisions per episode; `None` means `E + 1`.
    pub max_steps: Option<usize>,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig { cost_coefficient: 0.0, initial_expert: 0, obs_dim: 768, max_steps: None }
    }
}

impl RouterConfig {
    pub fn validate(&self, num_experts: usize) -> Result<()> {
        if !(self.cost_coefficient >= 0.0 && self.cost_coefficient.is_finite()) {
            return Err(Error::Config("cost coefficient must be a finite non-negative number".into()));
        }
        if self.initial_expert >= num_experts {
            return Err(Error::Config(format!("initial expert {} does not exist", self.initial_expert)));
        }
        if self.obs_dim == 0 {
            return Err(Error::Config("obs_dim must be positive".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn horizon(&self, num_experts: usize) -> usize {
        self.max_steps.unwrap_or(num_experts + 1)
    }
}

/// +1 for a correct label, −1 for a wrong one, 0 when the action is not a
/// classification.
pub fn classification_reward(action: Action, true_label: u8) -> f64 {
    match action {
        Action::Classify(label) if label == true_label => 1.0,
        Action::Classify(_) => -1.0,
        Action::Activate(_) => 0.0,
    }
}

/// `−C(e) / Σ_j C(e_j)`.
pub fn expert_cost_reward(expert: usize, experts: &[ExpertSpec]) -> f64 {
    -experts[expert].cost_tflops / total_cost(experts)
}

/// `R_c + λ·R_e`, with `R_e = 0` for classification actions.
pub fn total_reward(action: Action, true_label: u8, cost_coefficient: f64, experts: &[ExpertSpec]) -> f64 {
    let cost = match action {
        Action::Activate(e) => expert_cost_reward(e, experts),
        Action::Classify(_) => 0.0,
    };
    classification_reward(action, true_label) + cost_coefficient * cost
}

/// Set of activated experts as a bitmask (bit `e` ⇔ expert `e` active).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpertSet(pub u32);

impl ExpertSet {
    pub fn single(expert: usize) -> Self {
        ExpertSet(1 << expert)
    }

    pub fn contains(self, expert: usize) -> bool {
        self.0 & (1 << expert) != 0
    }

    pub fn insert(&mut self, expert: usize) {
        self.0 |= 1 << expert;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&e| self.contains(e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub sample: usize,
    pub activated: ExpertSet,
    /// Experts in activation order, initial expert first.
    pub order: Vec<usize>,
    pub step: usize,
    pub accumulated_cost: f64,
    pub done: bool,
}

/// One activated expert's embedding as seen by the agent.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedEmbedding {
    pub expert: usize,
    pub values: Arc<[f64]>,
}

/// Embeddings of every activated expert, in activation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Observation {
    entries: Vec<ObservedEmbedding>,
}

impl Observation {
    pub fn new() -> Self {
        Observation { entries: Vec::new() }
    }

    pub fn single(expert: usize, values: Vec<f64>) -> Self {
        let mut obs = Observation::new();
        obs.push(expert, values);
        obs
    }

    pub fn push(&mut self, expert: usize, values: Vec<f64>) {
        self.entries.push(ObservedEmbedding { expert, values: values.into() });
    }

    /// Copy of `self` with one more entry; existing embeddings are shared.
    pub fn extended(&self, expert: usize, values: Vec<f64>) -> Self {
        let mut next = self.clone();
        next.push(expert, values);
        next
    }

    pub fn entries(&self) -> &[ObservedEmbedding] {
        &self.entries
    }

    pub fn last(&self) -> Option<&ObservedEmbedding> {
        self.entries.last()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub next_observation: Observation,
    pub done: bool,
    pub valid_action_mask: Vec<bool>,
}

/// Starts an episode on `sample` with only the initial expert active. No
/// reward is emitted for the initial activation, but its cost is counted.
pub fn reset(bank: &EmbeddingBank, cfg: &RouterConfig, sample: usize) -> Result<(EnvState, Observation)> {
    cfg.validate(bank.num_experts())?;
    if sample >= bank.num_samples() {
        return Err(Error::Contract(format!("sample {sample} out of range ({} samples)", bank.num_samples())));
    }
    let e = cfg.initial_expert;
    let state = EnvState {
        sample,
        activated: ExpertSet::single(e),
        order: vec![e],
        step: 0,
        accumulated_cost: bank.experts()[e].cost_tflops,
        done: false,
    };
    let obs = Observation::single(e, bank.embedding_f64(e, sample));
    Ok((state, obs))
}

/// Raw (un-augmented) observation for the current state.
pub fn observation(bank: &EmbeddingBank, state: &EnvState) -> Observation {
    let mut obs = Observation::new();
    for &e in &state.order {
        obs.push(e, bank.embedding_f64(e, state.sample));
    }
    obs
}

/// Valid actions: both labels always (while not done); `Activate(e)` only for
/// inactive experts and only while a later decision still fits in the horizon.
pub fn valid_action_mask(state: &EnvState, num_experts: usize, horizon: usize) -> Vec<bool> {
    let mut mask = vec![!state.done; num_actions(num_experts)];
    let can_extend = !state.done && state.step + 1 < horizon;
    for e in 0..num_experts {
        mask[NUM_CLASSES + e] = can_extend && !state.activated.contains(e);
    }
    mask
}

pub fn step(state: &mut EnvState, action: Action, bank: &EmbeddingBank, cfg: &RouterConfig) -> Result<StepResult> {
    let experts = bank.experts();
    let horizon = cfg.horizon(experts.len());
    if state.done {
        return Err(Error::Contract("episode already finished".into()));
    }
    let mask = valid_action_mask(state, experts.len(), horizon);
    let index = action.index();
    if index >= mask.len() || !mask[index] {
        return Err(Error::Contract(format!("action {action:?} is not valid in this state")));
    }
    let reward = total_reward(action, bank.label(state.sample), cfg.cost_coefficient, experts);
    state.step += 1;
    match action {
        Action::Classify(_) => state.done = true,
        Action::Activate(e) => {
            state.activated.insert(e);
            state.order.push(e);
            state.accumulated_cost += experts[e].cost_tflops;
        }
    }
    Ok(StepResult {
        reward,
        next_observation: observation(bank, state),
        done: state.done,
        valid_action_mask: valid_action_mask(state, experts.len(), horizon),
    })
}

/// TFLOPs spent so far, initial expert included.
pub fn episode_cost(state: &EnvState) -> f64 {
    state.accumulated_cost
}
