//! Exact solver for a quantized version of the routing problem.
//!
//! The latent is projected onto the class axis `s = (z₁ + z₂)/√2` and cut
//! into `K` equal-mass bins. Each expert reveals which of its cells the
//! sample's bin falls in; finer experts have more cells. With finitely many
//! information states the optimal expected reward follows by backward
//! induction.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bank::{total_cost, validate_experts, EmbeddingBank, ExpertSpec, Split, SyntheticConfig};
use crate::env::{num_actions, Action, EnvState, Observation, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::RoutingPolicy;

/// Largest supported bin count; beyond this the equal-mass edges in the
/// tails stop being distinguishable in double precision.
pub const MAX_BINS: usize = 4096;

/// Ties between action values within this margin go to the lower index.
const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMdp {
    /// Probability mass of each bin (all equal to 1/K).
    pub bin_prior: Vec<f64>,
    /// P(label = 1 | bin).
    pub posterior: Vec<f64>,
    /// `partition[e][b]` is the cell expert `e` reports for bin `b`.
    pub partition: Vec<Vec<usize>>,
    pub num_cells: Vec<usize>,
    pub costs: Vec<f64>,
    pub lambda: f64,
    /// Maximum number of decisions per episode.
    pub horizon: usize,
}

/// Activation history: `(expert, cell)` pairs in activation order, starting
/// with the initial expert (always expert 0).
pub type InfoState = Vec<(usize, usize)>;

impl QuantizedMdp {
    pub fn num_bins(&self) -> usize {
        self.posterior.len()
    }

    pub fn num_experts(&self) -> usize {
        self.costs.len()
    }

    /// Normalized cost reward of activating `e`.
    pub fn cost_reward(&self, e: usize) -> f64 {
        -self.costs[e] / self.costs.iter().sum::<f64>()
    }

    /// Bins consistent with a history.
    pub fn consistent_bins(&self, state: &[(usize, usize)]) -> Vec<usize> {
        (0..self.num_bins()).filter(|&b| state.iter().all(|&(e, c)| self.partition[e][b] == c)).collect()
    }

    /// Valid actions after `state`, in the environment's layout.
    pub fn valid_actions(&self, state: &[(usize, usize)]) -> Vec<bool> {
        let mut mask = vec![true; num_actions(self.num_experts())];
        let can_extend = state.len() < self.horizon;
        for e in 0..self.num_experts() {
            mask[NUM_CLASSES + e] = can_extend && state.iter().all(|&(a, _)| a != e);
        }
        mask
    }

    /// Expected immediate reward of `action` given the bins in `bins`.
    fn classify_value(&self, bins: &[usize], label: u8) -> f64 {
        let mass: f64 = bins.iter().map(|&b| self.bin_prior[b]).sum();
        let p1: f64 = bins.iter().map(|&b| self.bin_prior[b] * self.posterior[b]).sum::<f64>() / mass;
        let p = if label == 1 { p1 } else { 1.0 - p1 };
        2.0 * p - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_bins();
        let e = self.num_experts();
        if k < 2 || self.bin_prior.len() != k || self.partition.len() != e || self.num_cells.len() != e || e == 0 {
            return Err(Error::Contract("inconsistent quantized MDP dimensions".into()));
        }
        if (self.bin_prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract("bin priors must sum to 1".into()));
        }
        if self.posterior.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Contract("posteriors must lie in [0, 1]".into()));
        }
        for (part, &cells) in self.partition.iter().zip(&self.num_cells) {
            if part.len() != k || part.iter().any(|&c| c >= cells) || part.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Contract("partitions must map bins onto contiguous cells".into()));
            }
        }
        Ok(())
    }
}

fn mixture_cdf(s: f64, shift: f64, unit: &Normal) -> f64 {
    0.5 * unit.cdf(s - shift) + 0.5 * unit.cdf(s + shift)
}

/// Mixture quantile by bisection.
fn mixture_quantile(q: f64, shift: f64, unit: &Normal) -> f64 {
    let (mut lo, mut hi) = (-shift - 40.0, shift + 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(mid, shift, unit) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Cut positions (between bins) of a contiguous `cells`-way partition of
/// `k` bins, chosen from `allowed` so the result is nested inside the
/// partition `allowed` came from.
fn nested_cuts(k: usize, cells: usize, allowed: &[usize]) -> Vec<usize> {
    let need = cells - 1;
    let mut cuts = Vec::with_capacity(need);
    let mut from = 0;
    for j in 1..=need {
        let target = j as f64 * k as f64 / cells as f64;
        // Leave enough candidates for the remaining cuts.
        let last = allowed.len() - (need - j) - 1;
        let best = (from..=last)
            .min_by(|&a, &b| (allowed[a] as f64 - target).abs().total_cmp(&(allowed[b] as f64 - target).abs()))
            .unwrap();
        cuts.push(allowed[best]);
        from = best + 1;
    }
    cuts
}

fn cells_from_cuts(k: usize, cuts: &[usize]) -> Vec<usize> {
    (0..k).map(|b| cuts.iter().filter(|&&c| c <= b).count()).collect()
}

/// Builds the quantized MDP for a synthetic configuration. Expert `e`
/// gets `ceil(K·fidelity)` cells (at least one); coarser partitions only
/// cut where every finer one also cuts.
pub fn build_quantized(cfg: &SyntheticConfig, experts: &[ExpertSpec], k: usize, lambda: f64) -> Result<QuantizedMdp> {
    cfg.validate()?;
    validate_experts(experts)?;
    if k < 2 {
        return Err(Error::Config("K must be at least 2".into()));
    }
    if k > MAX_BINS {
        return Err(Error::Config(format!("K = {k} exceeds the numeric resolution limit {MAX_BINS}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config("lambda must be a finite non-negative number".into()));
    }
    let mut fidelity = Vec::with_capacity(experts.len());
    for e in experts {
        match e.fidelity {
            Some(f) => fidelity.push(f),
            None => return Err(Error::Config(format!("expert {} has no fidelity", e.name))),
        }
    }

    // In units of the latent std the class axis carries means ±μ√2/σ.
    let unit = Normal::new(0.0, 1.0).expect("standard normal");
    let shift = cfg.class_separation * std::f64::consts::SQRT_2 / cfg.latent_noise;
    let mut edges = vec![f64::NEG_INFINITY];
    for b in 1..k {
        edges.push(mixture_quantile(b as f64 / k as f64, shift, &unit));
    }
    edges.push(f64::INFINITY);
    for w in edges.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Config(format!("K = {k} is too fine for the class separation")));
        }
    }
    let bin_prior = vec![1.0 / k as f64; k];
    let posterior: Vec<f64> = edges
        .windows(2)
        .map(|w| {
            let pos = unit.cdf(w[1] - shift) - unit.cdf(w[0] - shift);
            let neg = unit.cdf(w[1] + shift) - unit.cdf(w[0] + shift);
            (pos / (pos + neg)).clamp(0.0, 1.0)
        })
        .collect();

    let num_cells: Vec<usize> = fidelity.iter().map(|f| ((k as f64 * f).ceil() as usize).clamp(1, k)).collect();
    let mut order: Vec<usize> = (0..experts.len()).collect();
    order.sort_by(|&a, &b| num_cells[b].cmp(&num_cells[a]).then(a.cmp(&b)));
    let mut partition = vec![Vec::new(); experts.len()];
    let mut allowed: Vec<usize> = (1..k).collect();
    for e in order {
        let cuts = nested_cuts(k, num_cells[e], &allowed);
        partition[e] = cells_from_cuts(k, &cuts);
        allowed = cuts;
    }

    let mdp = QuantizedMdp {
        bin_prior,
        posterior,
        partition,
        num_cells,
        costs: experts.iter().map(|e| e.cost_tflops).collect(),
        lambda,
        horizon: experts.len() + 1,
    };
    mdp.validate()?;
    Ok(mdp)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalSolution {
    /// Expected reward per episode under the optimal policy.
    pub value: f64,
    /// Optimal action index for every reachable information state.
    pub policy: HashMap<InfoState, usize>,
}

struct Solver<'a> {
    mdp: &'a QuantizedMdp,
    memo: HashMap<InfoState, (f64, usize)>,
}

impl Solver<'_> {
    fn solve(&mut self, state: &InfoState) -> f64 {
        if let Some(&(v, _)) = self.memo.get(state) {
            return v;
        }
        let mdp = self.mdp;
        let bins = mdp.consistent_bins(state);
        let mask = mdp.valid_actions(state);
        let mut best = (f64::NEG_INFINITY, 0);
        for (a, &ok) in mask.iter().enumerate() {
            if !ok {
                continue;
            }
            let v = match Action::from_index(a, mdp.num_experts()).expect("index in range") {
                Action::Classify(y) => mdp.classify_value(&bins, y),
                Action::Activate(e) => mdp.lambda * mdp.cost_reward(e) + self.expect_over_cells(state, &bins, e),
            };
            if v > best.0 + TIE_EPS {
                best = (v, a);
            }
        }
        self.memo.insert(state.clone(), best);
        best.0
    }

    fn expect_over_cells(&mut self, state: &InfoState, bins: &[usize], e: usize) -> f64 {
        let mdp = self.mdp;
        let mass: f64 = bins.iter().map(|&b| mdp.bin_prior[b]).sum();
        let mut cells: Vec<usize> = bins.iter().map(|&b| mdp.partition[e][b]).collect();
        cells.dedup();
        let mut total = 0.0;
        for c in cells {
            let weight: f64 = bins.iter().filter(|&&b| mdp.partition[e][b] == c).map(|&b| mdp.bin_prior[b]).sum();
            let mut next = state.clone();
            next.push((e, c));
            total += weight / mass * self.solve(&next);
        }
        total
    }
}

/// Backward induction over information states, undiscounted.
pub fn solve_optimal(mdp: &QuantizedMdp) -> Result<OptimalSolution> {
    mdp.validate()?;
    let mut solver = Solver { mdp, memo: HashMap::new() };
    let mut value = 0.0;
    for c in 0..mdp.num_cells[0] {
        let mass: f64 = (0..mdp.num_bins()).filter(|&b| mdp.partition[0][b] == c).map(|b| mdp.bin_prior[b]).sum();
        if mass > 0.0 {
            value += mass * solver.solve(&vec![(0, c)]);
        }
    }
    let policy = solver.memo.into_iter().map(|(s, (_, a))| (s, a)).collect();
    Ok(OptimalSolution { value, policy })
}

/// Exact expected reward of a deterministic policy, by enumerating bins.
pub fn policy_value<F>(mdp: &QuantizedMdp, mut policy: F) -> Result<f64>
where
    F: FnMut(&InfoState, &[bool]) -> Result<usize>,
{
    mdp.validate()?;
    let mut value = 0.0;
    for b in 0..mdp.num_bins() {
        let mut state: InfoState = vec![(0, mdp.partition[0][b])];
        let mut reward = 0.0;
        loop {
            let mask = mdp.valid_actions(&state);
            let a = policy(&state, &mask)?;
            if a >= mask.len() || !mask[a] {
                return Err(Error::Contract(format!("policy chose invalid action {a} in state {state:?}")));
            }
            match Action::from_index(a, mdp.num_experts())? {
                Action::Classify(y) => {
                    let p = if y == 1 { mdp.posterior[b] } else { 1.0 - mdp.posterior[b] };
                    reward += 2.0 * p - 1.0;
                    break;
                }
                Action::Activate(e) => {
                    reward += mdp.lambda * mdp.cost_reward(e);
                    state.push((e, mdp.partition[e][b]));
                }
            }
        }
        value += mdp.bin_prior[b] * reward;
    }
    Ok(value)
}

/// Table lookup policy; errors on states the table does not cover.
pub fn table_policy(table: &HashMap<InfoState, usize>) -> impl FnMut(&InfoState, &[bool]) -> Result<usize> + '_ {
    move |state, _| table.get(state).copied().ok_or_else(|| Error::Contract(format!("no action for state {state:?}")))
}

/// One-hot code of `cell` among `cells`.
pub fn cell_code(cell: usize, cells: usize) -> Vec<f64> {
    let mut v = vec![0.0; cells];
    v[cell] = 1.0;
    v
}

/// Experts whose embeddings are one-hot cell codes.
pub fn cell_experts(mdp: &QuantizedMdp, experts: &[ExpertSpec]) -> Vec<ExpertSpec> {
    experts.iter().zip(&mdp.num_cells).map(|(e, &cells)| ExpertSpec { dim: cells, ..e.clone() }).collect()
}

/// Samples a bank from the quantized MDP: a uniform bin, a label from its
/// posterior and one-hot cell codes per expert.
pub fn sample_bank(
    mdp: &QuantizedMdp,
    experts: &[ExpertSpec],
    num_train: usize,
    num_test: usize,
    seed: u64,
) -> Result<EmbeddingBank> {
    if num_train == 0 || num_test == 0 {
        return Err(Error::Config("both splits need samples".into()));
    }
    if (total_cost(experts) - mdp.costs.iter().sum::<f64>()).abs() > 1e-12 {
        return Err(Error::Config("experts do not match the quantized MDP".into()));
    }
    let specs = cell_experts(mdp, experts);
    let n = num_train + num_test;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(n);
    let mut matrices: Vec<Array2<f32>> = specs.iter().map(|s| Array2::zeros((n, s.dim))).collect();
    for i in 0..n {
        let b = rng.random_range(0..mdp.num_bins());
        labels.push(u8::from(rng.random::<f64>() < mdp.posterior[b]));
        for (e, m) in matrices.iter_mut().enumerate() {
            m[[i, mdp.partition[e][b]]] = 1.0;
        }
    }
    let split = (0..n).map(|i| if i < num_train { Split::Train } else { Split::Test }).collect();
    EmbeddingBank::new(specs, labels, split, matrices, None)
}

/// Evaluates a routing policy on the quantized MDP by feeding it one-hot
/// cell codes.
pub fn routed_policy_value<P: RoutingPolicy + ?Sized>(mdp: &QuantizedMdp, policy: &P) -> Result<f64> {
    policy_value(mdp, |state, mask| {
        let mut obs = Observation::new();
        let mut activated = crate::env::ExpertSet::default();
        for &(e, c) in state {
            obs.push(e, cell_code(c, mdp.num_cells[e]));
            activated.insert(e);
        }
        let env_state = EnvState {
            sample: 0,
            activated,
            order: state.iter().map(|&(e, _)| e).collect(),
            step: state.len() - 1,
            accumulated_cost: state.iter().map(|&(e, _)| mdp.costs[e]).sum(),
            done: false,
        };
        policy.decide(&env_state, &obs, mask)
    })
}
