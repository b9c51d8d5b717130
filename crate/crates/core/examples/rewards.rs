//! Walks one episode by hand and prints every reward component.
//!
//!     cargo run --example rewards

use srpmoe::bank::{default_expert_triple, generate_synthetic, resized_experts, SyntheticConfig};
use srpmoe::env::{self, classification_reward, expert_cost_reward, Action, RouterConfig};

fn main() -> srpmoe::Result<()> {
    let experts = default_expert_triple();
    println!("expert cost rewards (normalized by total cost):");
    for e in &experts {
        println!("  {:<7} {:>5} TFLOPs  R_e = {:+.5}", e.name, e.cost_tflops, expert_cost_reward(e.id, &experts));
    }
    println!(
        "classification rewards: correct {:+}, wrong {:+}, activate {:+}",
        classification_reward(Action::Classify(1), 1),
        classification_reward(Action::Classify(0), 1),
        classification_reward(Action::Activate(2), 1)
    );

    // A small bank keeps this instant; costs and fidelities are the defaults.
    let small = resized_experts(&experts, &[8, 8, 12]);
    let bank = generate_synthetic(&SyntheticConfig { num_train: 20, num_test: 20, ..SyntheticConfig::default() }, &small)?;
    let cfg = RouterConfig { cost_coefficient: 0.2, obs_dim: 8, ..RouterConfig::default() };
    let sample = 0;
    let (mut state, obs) = env::reset(&bank, &cfg, sample)?;
    println!("\nepisode on sample {sample} (label {}), lambda = {}", bank.label(sample), cfg.cost_coefficient);
    println!("  start: experts {:?}, observation from expert {}", state.order, obs.last().unwrap().expert);
    for action in [Action::Activate(1), Action::Activate(2), Action::Classify(bank.label(sample))] {
        let result = env::step(&mut state, action, &bank, &cfg)?;
        println!(
            "  {action:?}: reward {:+.5}, done {}, valid mask {:?}",
            result.reward, result.done, result.valid_action_mask
        );
    }
    println!("  episode cost {:.2} TFLOPs (initial expert included)", env::episode_cost(&state));
    Ok(())
}
