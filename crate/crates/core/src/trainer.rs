//! Training runs and λ × seed sweeps.

use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bank::{EmbeddingBank, Split};
use crate::dqn::{AgentConfig, DqnAgent, Transition};
use crate::env::{self, valid_action_mask, Action, EnvState, Observation, RouterConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, AssignmentRecord, MetricsRecord, RoutingPolicy};
use crate::nn::{AdamConfig, OptimizerState};
use crate::pg::{self, action_distribution, compute_advantages, sample_action, PgConfig, PgSample};
use crate::router::{HeadKind, ObservationMode, RouterNetwork};

/// Episodes per training-log row.
pub const LOG_INTERVAL: usize = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    #[default]
    Dqn,
    Pg,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Pg => "pg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub agent: AgentKind,
    pub router: RouterConfig,
    pub dqn: AgentConfig,
    pub pg: PgConfig,
    pub mode: ObservationMode,
    pub augment: bool,
    /// Augmentation noise as a fraction of each dimension's train std.
    pub aug_sigma: f64,
    pub seed: u64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            agent: AgentKind::Dqn,
            router: RouterConfig::default(),
            dqn: AgentConfig::default(),
            pg: PgConfig::default(),
            mode: ObservationMode::Direct,
            augment: true,
            aug_sigma: 0.1,
            seed: 0,
        }
    }
}

impl TrainRunConfig {
    pub fn episodes(&self) -> usize {
        match self.agent {
            AgentKind::Dqn => self.dqn.episodes,
            AgentKind::Pg => self.pg.episodes,
        }
    }

    pub fn set_episodes(&mut self, episodes: usize) {
        self.dqn.episodes = episodes;
        self.pg.episodes = episodes;
    }

    /// Turns augmentation off (σ = 0) or on with the given σ.
    pub fn with_augmentation(mut self, sigma: Option<f64>) -> Self {
        match sigma {
            Some(s) if s > 0.0 => {
                self.augment = true;
                self.aug_sigma = s;
            }
            _ => {
                self.augment = false;
                self.aug_sigma = 0.0;
            }
        }
        self
    }

    pub fn validate(&self, bank: &EmbeddingBank) -> Result<()> {
        self.router.validate(bank.num_experts())?;
        match self.agent {
            AgentKind::Dqn => self.dqn.validate()?,
            AgentKind::Pg => self.pg.validate()?,
        }
        if !(self.aug_sigma >= 0.0 && self.aug_sigma.is_finite()) {
            return Err(Error::Config("aug_sigma must be a finite non-negative number".into()));
        }
        if self.augment != (self.aug_sigma > 0.0) {
            return Err(Error::Config("aug_sigma must be positive exactly when augmentation is on".into()));
        }
        if self.episodes() == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        Ok(())
    }
}

/// Adds zero-mean Gaussian noise with per-dimension std `sigma · std[d]`.
pub fn augment_embedding<R: Rng + ?Sized>(embedding: &[f64], std: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return embedding.to_vec();
    }
    embedding
        .iter()
        .zip(std)
        .map(|(&v, &s)| {
            let z: f64 = StandardNormal.sample(rng);
            if s == 0.0 {
                v
            } else {
                v + sigma * s * z
            }
        })
        .collect()
}

/// Turns bank rows into agent-facing embeddings; noisy only during training.
struct Augmenter {
    std: Vec<Vec<f64>>,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl Augmenter {
    fn new(bank: &EmbeddingBank, sigma: f64, rng: ChaCha8Rng) -> Self {
        let std = if sigma > 0.0 { (0..bank.num_experts()).map(|e| bank.train_std(e)).collect() } else { Vec::new() };
        Augmenter { std, sigma, rng }
    }

    fn embed(&mut self, bank: &EmbeddingBank, expert: usize, sample: usize) -> Vec<f64> {
        let raw = bank.embedding_f64(expert, sample);
        if self.sigma == 0.0 {
            return raw;
        }
        augment_embedding(&raw, &self.std[expert], self.sigma, &mut self.rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub train_acc_window: f64,
    pub mean_cost_tflops: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    /// Set when the run aborted on divergence.
    pub failed: Option<String>,
}

impl TrainingLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Default)]
struct Window {
    episodes: usize,
    reward: f64,
    correct: usize,
    cost: f64,
}

impl Window {
    fn record(&mut self, reward: f64, correct: bool, cost: f64) {
        self.episodes += 1;
        self.reward += reward;
        self.correct += correct as usize;
        self.cost += cost;
    }

    fn flush(&mut self, episode: usize, log: &mut TrainingLog) {
        if self.episodes == 0 {
            return;
        }
        let n = self.episodes as f64;
        log.rows.push(LogRow {
            episode,
            mean_reward: self.reward / n,
            train_acc_window: 100.0 * self.correct as f64 / n,
            mean_cost_tflops: self.cost / n,
        });
        *self = Window::default();
    }
}

/// A trained router plus how it should be queried.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedRouter {
    pub network: RouterNetwork,
    pub mode: ObservationMode,
}

impl RoutingPolicy for TrainedRouter {
    /// Greedy: argmax of Q for dueling heads, of the policy for policy heads.
    fn decide(&self, _state: &EnvState, obs: &Observation, mask: &[bool]) -> Result<usize> {
        let pass = self.network.forward_batch(&[obs], self.mode)?;
        let scores = match self.network.kind() {
            HeadKind::Dueling => pass.q_values().row(0).to_vec(),
            HeadKind::Policy => pass.head.row(0).to_vec(),
        };
        crate::dqn::greedy_action(&scores, mask)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub router: TrainedRouter,
    pub log: TrainingLog,
}

const INIT_STREAM: u64 = 1;
const EPISODE_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains one router on the bank's train split. Deterministic in
/// `cfg.seed`. Divergence ends the run early with `log.failed` set.
pub fn train(cfg: &TrainRunConfig, bank: &EmbeddingBank) -> Result<TrainOutcome> {
    cfg.validate(bank)?;
    match cfg.agent {
        AgentKind::Dqn => train_dqn(cfg, bank),
        AgentKind::Pg => train_pg(cfg, bank),
    }
}

fn expert_dims(bank: &EmbeddingBank) -> Vec<usize> {
    bank.experts().iter().map(|e| e.dim).collect()
}

fn train_dqn(cfg: &TrainRunConfig, bank: &EmbeddingBank) -> Result<TrainOutcome> {
    let mut init_rng = stream(cfg.seed, INIT_STREAM);
    let mut rng = stream(cfg.seed, EPISODE_STREAM);
    let mut augmenter = Augmenter::new(bank, cfg.aug_sigma, stream(cfg.seed, AUGMENT_STREAM));
    let mut agent = DqnAgent::new(&expert_dims(bank), cfg.router.obs_dim, cfg.dqn.clone(), cfg.mode, &mut init_rng)?;
    let train_idx = bank.indices(Split::Train);
    let num_experts = bank.num_experts();
    let horizon = cfg.router.horizon(num_experts);
    let mut log = TrainingLog::default();
    let mut window = Window::default();

    'episodes: for episode in 0..cfg.dqn.episodes {
        let sample = train_idx[rng.random_range(0..train_idx.len())];
        let (mut state, _) = env::reset(bank, &cfg.router, sample)?;
        let mut obs = Observation::single(cfg.router.initial_expert, augmenter.embed(bank, cfg.router.initial_expert, sample));
        let mut mask = valid_action_mask(&state, num_experts, horizon);
        let epsilon = cfg.dqn.epsilon_at(episode);
        let mut episode_reward = 0.0;
        loop {
            let index = agent.act(&obs, &mask, epsilon, &mut rng)?;
            let action = Action::from_index(index, num_experts)?;
            let result = env::step(&mut state, action, bank, &cfg.router)?;
            episode_reward += result.reward;
            let next_obs = match action {
                Action::Activate(e) => obs.extended(e, augmenter.embed(bank, e, sample)),
                Action::Classify(_) => obs.clone(),
            };
            agent.remember(Transition {
                observation: obs,
                action: index,
                reward: result.reward,
                next_observation: next_obs.clone(),
                done: result.done,
                next_mask: result.valid_action_mask.clone(),
            });
            if let Err(err) = agent.maybe_learn(&mut rng) {
                match err {
                    Error::Divergence(msg) => {
                        log.failed = Some(format!("episode {episode}: {msg}"));
                        break 'episodes;
                    }
                    other => return Err(other),
                }
            }
            if result.done {
                let correct = action == Action::Classify(bank.label(sample));
                window.record(episode_reward, correct, env::episode_cost(&state));
                break;
            }
            obs = next_obs;
            mask = result.valid_action_mask;
        }
        if (episode + 1) % LOG_INTERVAL == 0 {
            window.flush(episode + 1, &mut log);
        }
    }
    window.flush(cfg.dqn.episodes, &mut log);
    Ok(TrainOutcome { router: TrainedRouter { network: agent.online, mode: cfg.mode }, log })
}

fn train_pg(cfg: &TrainRunConfig, bank: &EmbeddingBank) -> Result<TrainOutcome> {
    let mut init_rng = stream(cfg.seed, INIT_STREAM);
    let mut rng = stream(cfg.seed, EPISODE_STREAM);
    let mut augmenter = Augmenter::new(bank, cfg.aug_sigma, stream(cfg.seed, AUGMENT_STREAM));
    let mut net = RouterNetwork::new(&expert_dims(bank), cfg.router.obs_dim, HeadKind::Policy, &mut init_rng)?;
    let mut optimizer =
        OptimizerState::new(&net, AdamConfig { learning_rate: cfg.pg.learning_rate, ..AdamConfig::default() })?;
    let train_idx = bank.indices(Split::Train);
    let num_experts = bank.num_experts();
    let horizon = cfg.router.horizon(num_experts);
    let mut log = TrainingLog::default();
    let mut window = Window::default();
    let mut rollout: Vec<PgSample> = Vec::new();
    let mut rollout_episodes = 0;

    for episode in 0..cfg.pg.episodes {
        let sample = train_idx[rng.random_range(0..train_idx.len())];
        let (mut state, _) = env::reset(bank, &cfg.router, sample)?;
        let mut obs = Observation::single(cfg.router.initial_expert, augmenter.embed(bank, cfg.router.initial_expert, sample));
        let mut mask = valid_action_mask(&state, num_experts, horizon);
        let mut steps: Vec<(Observation, Vec<bool>, usize, f64, f64)> = Vec::new();
        let mut rewards = Vec::new();
        loop {
            let pass = net.forward_batch(&[&obs], cfg.mode)?;
            let probs = pg::masked_softmax(pass.head.row(0).as_slice().unwrap(), &mask)?;
            let index = sample_action(&probs, &mut rng);
            let action = Action::from_index(index, num_experts)?;
            let result = env::step(&mut state, action, bank, &cfg.router)?;
            rewards.push(result.reward);
            let next_obs = match action {
                Action::Activate(e) => obs.extended(e, augmenter.embed(bank, e, sample)),
                Action::Classify(_) => obs.clone(),
            };
            steps.push((obs, mask, index, probs[index].ln(), pass.value[0]));
            if result.done {
                let correct = action == Action::Classify(bank.label(sample));
                window.record(rewards.iter().sum(), correct, env::episode_cost(&state));
                break;
            }
            obs = next_obs;
            mask = result.valid_action_mask;
        }
        let values: Vec<f64> = steps.iter().map(|s| s.4).collect();
        let (advantages, returns) = compute_advantages(&rewards, &values, cfg.pg.gamma);
        for ((step, advantage), ret) in steps.into_iter().zip(advantages).zip(returns) {
            let (observation, mask, action, old_log_prob, _) = step;
            rollout.push(PgSample { observation, mask, action, old_log_prob, advantage, ret });
        }
        rollout_episodes += 1;

        let last = episode + 1 == cfg.pg.episodes;
        if rollout_episodes == cfg.pg.rollout_episodes || last {
            match pg::update(&mut net, &mut optimizer, &rollout, &cfg.pg, cfg.mode) {
                Ok(_) => {}
                Err(Error::Divergence(msg)) => {
                    log.failed = Some(format!("episode {episode}: {msg}"));
                    break;
                }
                Err(other) => return Err(other),
            }
            rollout.clear();
            rollout_episodes = 0;
        }
        if (episode + 1) % LOG_INTERVAL == 0 {
            window.flush(episode + 1, &mut log);
        }
    }
    window.flush(cfg.pg.episodes, &mut log);
    Ok(TrainOutcome { router: TrainedRouter { network: net, mode: cfg.mode }, log })
}

/// Stochastic action probabilities of a policy-head router; exposed for
/// examples that want to inspect the learned distribution.
pub fn policy_probabilities(router: &TrainedRouter, obs: &Observation, mask: &[bool]) -> Result<Vec<f64>> {
    action_distribution(&router.network, obs, mask, router.mode)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub template: TrainRunConfig,
}

impl SweepGrid {
    pub fn default_lambdas() -> Vec<f64> {
        vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one lambda and one seed".into()));
        }
        Ok(())
    }

    /// Cells in (λ, seed) order.
    pub fn cells(&self) -> Vec<(f64, u64)> {
        self.lambdas.iter().flat_map(|&l| self.seeds.iter().map(move |&s| (l, s))).collect()
    }
}

/// Everything one sweep cell produced.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub record: MetricsRecord,
    pub test_assignments: Vec<AssignmentRecord>,
    pub outcome: Option<TrainOutcome>,
}

/// Trains and evaluates a single configuration into a metrics row.
pub fn run_cell(cfg: &TrainRunConfig, bank: &EmbeddingBank, overfit: bool) -> Result<CellOutcome> {
    let outcome = train(cfg, bank)?;
    let mut record = MetricsRecord::failed(cfg, overfit);
    if outcome.log.failed.is_some() {
        return Ok(CellOutcome { record, test_assignments: Vec::new(), outcome: Some(outcome) });
    }
    let train_eval = evaluate(&outcome.router, bank, Split::Train, &cfg.router)?;
    let test_eval = evaluate(&outcome.router, bank, Split::Test, &cfg.router)?;
    record.fill(train_eval.accuracy, test_eval.accuracy, test_eval.avg_tflops);
    Ok(CellOutcome { record, test_assignments: test_eval.assignments, outcome: Some(outcome) })
}

/// Runs every (λ, seed) cell, at most `jobs` at a time. `bank_for_seed`
/// supplies the bank each seed trains on. Cells that fail are kept as rows
/// with NaN metrics; results come back in (λ, seed) order.
pub fn sweep_detailed<F>(grid: &SweepGrid, bank_for_seed: F, overfit: bool, jobs: usize) -> Result<Vec<CellOutcome>>
where
    F: Fn(u64) -> Result<Arc<EmbeddingBank>> + Sync,
{
    grid.validate()?;
    let cells = grid.cells();
    let mut banks = Vec::new();
    for &seed in &grid.seeds {
        banks.push((seed, bank_for_seed(seed)?));
    }
    let bank_of = |seed: u64| banks.iter().find(|(s, _)| *s == seed).map(|(_, b)| Arc::clone(b)).unwrap();

    let run = |(lambda, seed): (f64, u64)| -> CellOutcome {
        let mut cfg = grid.template.clone();
        cfg.router.cost_coefficient = lambda;
        cfg.seed = seed;
        let bank = bank_of(seed);
        run_cell(&cfg, &bank, overfit).unwrap_or_else(|_| CellOutcome {
            record: MetricsRecord::failed(&cfg, overfit),
            test_assignments: Vec::new(),
            outcome: None,
        })
    };

    let jobs = jobs.max(1);
    if jobs == 1 {
        return Ok(cells.into_iter().map(run).collect());
    }
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(cells.len()) {
            scope.spawn(|| loop {
                let k = {
                    let mut guard = next.lock().unwrap();
                    let k = *guard;
                    *guard += 1;
                    k
                };
                if k >= cells.len() {
                    break;
                }
                let outcome = run(cells[k]);
                results.lock().unwrap()[k] = Some(outcome);
            });
        }
    });
    Ok(results.into_inner().unwrap().into_iter().map(|r| r.expect("every cell ran")).collect())
}

pub fn sweep<F>(grid: &SweepGrid, bank_for_seed: F, overfit: bool, jobs: usize) -> Result<Vec<MetricsRecord>>
where
    F: Fn(u64) -> Result<Arc<EmbeddingBank>> + Sync,
{
    Ok(sweep_detailed(grid, bank_for_seed, overfit, jobs)?.into_iter().map(|c| c.record).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{default_expert_triple, generate_synthetic, resized_experts, SyntheticConfig};

    fn tiny_bank() -> EmbeddingBank {
        let experts = resized_experts(&default_expert_triple(), &[4, 4, 6]);
        generate_synthetic(&SyntheticConfig { num_train: 60, num_test: 20, ..SyntheticConfig::default() }, &experts).unwrap()
    }

    fn tiny_cfg(agent: AgentKind) -> TrainRunConfig {
        let mut cfg = TrainRunConfig {
            agent,
            router: RouterConfig { obs_dim: 8, cost_coefficient: 0.2, ..RouterConfig::default() },
            dqn: AgentConfig { warmup_transitions: 32, batch_size: 16, target_sync_interval: 50, ..AgentConfig::default() },
            pg: PgConfig { rollout_episodes: 16, ..PgConfig::default() },
            ..TrainRunConfig::default()
        };
        cfg.set_episodes(150);
        cfg
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![0.5, -1.0, 2.0];
        assert_eq!(augment_embedding(&x, &[1.0, 1.0, 1.0], 0.0, &mut rng), x);
    }

    #[test]
    fn zero_std_dimension_is_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = augment_embedding(&[0.5, -1.0], &[0.0, 2.0], 0.3, &mut rng);
        assert_eq!(out[0], 0.5);
        assert_ne!(out[1], -1.0);
    }

    #[test]
    fn augmentation_noise_has_requested_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let std = [1.5];
        let sigma = 0.1;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let d = augment_embedding(&[2.0], &std, sigma, &mut rng)[0] - 2.0;
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / n as f64;
        let empirical = (sum_sq / n as f64 - mean * mean).sqrt();
        assert!((empirical / (sigma * std[0]) - 1.0).abs() < 0.02);
    }

    #[test]
    fn augment_flag_and_sigma_must_agree() {
        let bank = tiny_bank();
        let mut cfg = tiny_cfg(AgentKind::Dqn);
        cfg.aug_sigma = 0.0;
        assert!(matches!(cfg.validate(&bank), Err(Error::Config(_))));
        let cfg = tiny_cfg(AgentKind::Dqn).with_augmentation(None);
        assert!(cfg.validate(&bank).is_ok());
        assert!(!cfg.augment);
    }

    #[test]
    fn training_is_deterministic() {
        let bank = tiny_bank();
        for agent in [AgentKind::Dqn, AgentKind::Pg] {
            let cfg = tiny_cfg(agent);
            let a = train(&cfg, &bank).unwrap();
            let b = train(&cfg, &bank).unwrap();
            assert_eq!(a.router, b.router);
            assert_eq!(a.log, b.log);
            assert!(a.log.failed.is_none());
            let other = train(&TrainRunConfig { seed: 9, ..cfg }, &bank).unwrap();
            assert_ne!(a.router, other.router);
        }
    }

    #[test]
    fn bank_is_not_mutated_by_training() {
        let bank = tiny_bank();
        let copy = bank.clone();
        train(&tiny_cfg(AgentKind::Dqn), &bank).unwrap();
        assert_eq!(bank, copy);
    }

    #[test]
    fn log_has_one_row_per_interval_plus_tail() {
        let bank = tiny_bank();
        let mut cfg = tiny_cfg(AgentKind::Pg);
        cfg.set_episodes(2_100);
        let out = train(&cfg, &bank).unwrap();
        let episodes: Vec<usize> = out.log.rows.iter().map(|r| r.episode).collect();
        assert_eq!(episodes, vec![1000, 2000, 2100]);
        assert!(out.log.rows.iter().all(|r| r.mean_cost_tflops >= 0.59));
    }

    #[test]
    fn sweep_cardinality_and_order() {
        let bank = Arc::new(tiny_bank());
        let mut template = tiny_cfg(AgentKind::Dqn);
        template.set_episodes(40);
        let grid = SweepGrid { lambdas: vec![0.0, 0.5], seeds: vec![1, 2, 3], template };
        let records = sweep(&grid, |_| Ok(Arc::clone(&bank)), false, 2).unwrap();
        assert_eq!(records.len(), 6);
        let keys: Vec<(f64, u64)> = records.iter().map(|r| (r.lambda, r.seed)).collect();
        assert_eq!(keys, grid.cells());
        let sequential = sweep(&grid, |_| Ok(Arc::clone(&bank)), false, 1).unwrap();
        assert_eq!(records, sequential);
    }
}
