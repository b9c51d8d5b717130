//! Solves a quantized routing problem exactly, then trains a DQN router on
//! samples from it and compares expected rewards.
//!
//!     cargo run --release --example oracle_check [K] [lambda]

use srpmoe::bank::{default_expert_triple, SyntheticConfig};
use srpmoe::env::RouterConfig;
use srpmoe::oracle::{build_quantized, routed_policy_value, sample_bank, solve_optimal};
use srpmoe::trainer::{train, TrainRunConfig};

fn main() -> srpmoe::Result<()> {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().map(|s| s.parse().expect("K")).unwrap_or(16);
    let lambda: f64 = args.next().map(|s| s.parse().expect("lambda")).unwrap_or(0.2);

    let experts = default_expert_triple();
    let mdp = build_quantized(&SyntheticConfig::default(), &experts, k, lambda)?;
    println!("K = {k}, lambda = {lambda}");
    println!("cells per expert: {:?}", mdp.num_cells);
    println!("P(label 1 | bin): {:?}", mdp.posterior.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>());

    let optimal = solve_optimal(&mdp)?;
    let mut states: Vec<_> = optimal.policy.iter().collect();
    states.sort();
    for (state, action) in states.iter().take(12) {
        println!("  {state:?} -> action {action}");
    }

    let bank = sample_bank(&mdp, &experts, 20_000, 1, 1)?;
    let mut cfg = TrainRunConfig {
        router: RouterConfig { cost_coefficient: lambda, obs_dim: 16, ..RouterConfig::default() },
        seed: 1,
        ..TrainRunConfig::default()
    }
    .with_augmentation(None);
    cfg.set_episodes(10_000);
    let outcome = train(&cfg, &bank)?;
    let learned = routed_policy_value(&mdp, &outcome.router)?;
    println!("optimal {:.4}  learned {:.4}  ratio {:.4}", optimal.value, learned, learned / optimal.value);
    Ok(())
}
