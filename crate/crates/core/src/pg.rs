//! Softmax policy router trained with a clipped surrogate objective and a
//! learned value baseline.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{LayerGrad, OptimizerState};
use crate::router::{HeadKind, ObservationMode, RouterNetwork};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgConfig {
    pub learning_rate: f64,
    pub clip_ratio: f64,
    pub epochs: usize,
    /// Episodes collected per update.
    pub rollout_episodes: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub episodes: usize,
}

impl Default for PgConfig {
    fn default() -> Self {
        PgConfig {
            learning_rate: 1e-3,
            clip_ratio: 0.2,
            epochs: 4,
            rollout_episodes: 64,
            entropy_coef: 0.01,
            value_coef: 1.0,
            gamma: 0.99,
            episodes: 50_000,
        }
    }
}

impl PgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return Err(Error::Config("clip_ratio must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        if self.epochs == 0 || self.rollout_episodes == 0 {
            return Err(Error::Config("epochs and rollout_episodes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Softmax restricted to valid actions; invalid entries are exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &v)| v)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Contract("no valid action".into()));
    }
    let exps: Vec<f64> = logits.iter().zip(mask).map(|(&l, &v)| if v { (l - max).exp() } else { 0.0 }).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn action_distribution(
    net: &RouterNetwork,
    obs: &Observation,
    mask: &[bool],
    mode: ObservationMode,
) -> Result<Vec<f64>> {
    let pass = net.forward_batch(&[obs], mode)?;
    masked_softmax(pass.head.row(0).as_slice().unwrap(), mask)
}

pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = a;
            if u < acc {
                return a;
            }
        }
    }
    last
}

/// Discounted returns `G_t = Σ_{k≥t} γ^{k−t} r_k` and advantages `G_t − V(o_t)`.
pub fn compute_advantages(rewards: &[f64], values: &[f64], gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let mut returns = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        running = rewards[t] + gamma * running;
        returns[t] = running;
    }
    let advantages = returns.iter().zip(values).map(|(g, v)| g - v).collect();
    (advantages, returns)
}

/// One decision from a rollout, frozen with the behaviour policy's log-prob.
#[derive(Clone, Debug, PartialEq)]
pub struct PgSample {
    pub observation: Observation,
    pub mask: Vec<bool>,
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PgLoss {
    /// Negated mean clipped surrogate.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Samples skipped because their probability ratio was not finite.
    pub anomalies: usize,
}

impl PgLoss {
    pub fn total(&self, cfg: &PgConfig) -> f64 {
        self.policy_loss + cfg.value_coef * self.value_loss - cfg.entropy_coef * self.entropy
    }
}

fn evaluate(
    net: &RouterNetwork,
    batch: &[PgSample],
    cfg: &PgConfig,
    mode: ObservationMode,
    want_grads: bool,
) -> Result<(PgLoss, Option<Vec<LayerGrad>>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty rollout".into()));
    }
    let obs: Vec<&Observation> = batch.iter().map(|s| &s.observation).collect();
    let pass = net.forward_batch(&obs, mode)?;
    let n = batch.len() as f64;
    let mut loss = PgLoss::default();
    let mut d_logits = Array2::<f64>::zeros(pass.head.raw_dim());
    let mut d_value = Array1::<f64>::zeros(batch.len());
    for (i, s) in batch.iter().enumerate() {
        let probs = masked_softmax(pass.head.row(i).as_slice().unwrap(), &s.mask)?;
        let entropy: f64 = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
        let ratio = (probs[s.action].ln() - s.old_log_prob).exp();
        let v_err = pass.value[i] - s.ret;
        loss.value_loss += v_err * v_err / n;
        d_value[i] = cfg.value_coef * 2.0 * v_err / n;
        loss.entropy += entropy / n;
        for (j, &p) in probs.iter().enumerate() {
            if s.mask[j] && p > 0.0 {
                d_logits[[i, j]] += cfg.entropy_coef / n * p * (p.ln() + entropy);
            }
        }
        if !ratio.is_finite() {
            loss.anomalies += 1;
            continue;
        }
        let unclipped = ratio * s.advantage;
        let clipped = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * s.advantage;
        loss.policy_loss -= unclipped.min(clipped) / n;
        if unclipped <= clipped {
            // d(ρA)/d logit_j = ρA·(1[j=a] − π_j)
            for (j, &p) in probs.iter().enumerate() {
                if s.mask[j] {
                    let indicator = if j == s.action { 1.0 } else { 0.0 };
                    d_logits[[i, j]] -= unclipped * (indicator - p) / n;
                }
            }
        }
    }
    let total = loss.total(cfg);
    if !total.is_finite() {
        return Err(Error::Divergence(format!("policy loss is {total}")));
    }
    let grads = want_grads.then(|| net.backward(&pass, &d_value, &d_logits));
    Ok((loss, grads))
}

/// Losses and gradients of `−surrogate + c_v·value MSE − c_e·entropy`.
pub fn pg_loss_and_grads(
    net: &RouterNetwork,
    batch: &[PgSample],
    cfg: &PgConfig,
    mode: ObservationMode,
) -> Result<(PgLoss, Vec<LayerGrad>)> {
    let (loss, grads) = evaluate(net, batch, cfg, mode, true)?;
    Ok((loss, grads.expect("requested")))
}

pub fn pg_loss(net: &RouterNetwork, batch: &[PgSample], cfg: &PgConfig, mode: ObservationMode) -> Result<PgLoss> {
    Ok(evaluate(net, batch, cfg, mode, false)?.0)
}

/// `cfg.epochs` full-batch optimizer steps; returns the last epoch's
/// (policy loss, value loss).
pub fn update(
    net: &mut RouterNetwork,
    optimizer: &mut OptimizerState,
    batch: &[PgSample],
    cfg: &PgConfig,
    mode: ObservationMode,
) -> Result<(f64, f64)> {
    if net.kind() != HeadKind::Policy {
        return Err(Error::Contract("policy update needs a policy-head network".into()));
    }
    let mut last = (0.0, 0.0);
    for _ in 0..cfg.epochs {
        let (loss, grads) = pg_loss_and_grads(net, batch, cfg, mode)?;
        optimizer.step(net, &grads)?;
        last = (loss.policy_loss, loss.value_loss);
    }
    Ok(last)
}
