//! A desk-scale profile: the default expert costs and fidelities with small
//! embedding dimensions, so full λ sweeps finish in minutes on one core.

use crate::bank::{default_expert_triple, resized_experts, ExpertSpec, SyntheticConfig};
use crate::env::RouterConfig;
use crate::trainer::TrainRunConfig;

pub const COMPACT_DIMS: [usize; 3] = [32, 32, 48];
pub const COMPACT_OBS_DIM: usize = 32;
/// At these dimensions σ = 0.1 barely perturbs the embeddings and the
/// router memorizes the 1600 training samples.
pub const COMPACT_AUG_SIGMA: f64 = 1.0;

pub fn compact_experts() -> Vec<ExpertSpec> {
    resized_experts(&default_expert_triple(), &COMPACT_DIMS)
}

pub fn compact_synthetic(seed: u64, overfit_gap: f64) -> SyntheticConfig {
    SyntheticConfig { seed, overfit_gap, ..SyntheticConfig::default() }
}

pub fn compact_run(episodes: usize) -> TrainRunConfig {
    let mut cfg = TrainRunConfig {
        router: RouterConfig { obs_dim: COMPACT_OBS_DIM, ..RouterConfig::default() },
        ..TrainRunConfig::default()
    }
    .with_augmentation(Some(COMPACT_AUG_SIGMA));
    cfg.set_episodes(episodes);
    cfg
}
