//! Generates a synthetic bank, round-trips it through disk and reports
//! linear-probe accuracy per expert, with and without an overfit expert.
//!
//!     cargo run --release --example synthetic_bank [out_dir]

use srpmoe::bank::{default_expert_triple, generate_synthetic, load_bank, resized_experts, save_bank, SyntheticConfig};
use srpmoe::probe::{probe_all, ProbeConfig};

fn main() -> srpmoe::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("srpmoe-bank"));
    let experts = resized_experts(&default_expert_triple(), &[32, 32, 48]);

    for gap in [1.0, 0.3] {
        let cfg = SyntheticConfig { overfit_gap: gap, seed: 1, ..SyntheticConfig::default() };
        let bank = generate_synthetic(&cfg, &experts)?;
        println!("overfit_gap = {gap}");
        for r in probe_all(&bank, &ProbeConfig::default()) {
            let e = &bank.experts()[r.expert];
            println!(
                "  {:<7} dim {:>3}  train {:>5.1}%  test {:>5.1}%",
                e.name, e.dim, r.train_accuracy, r.test_accuracy
            );
        }
    }

    let bank = generate_synthetic(&SyntheticConfig { seed: 1, ..SyntheticConfig::default() }, &experts)?;
    let manifest = save_bank(&bank, &out)?;
    let reloaded = load_bank(&manifest)?;
    println!("saved to {}; reload identical: {}", manifest.display(), reloaded == bank);
    Ok(())
}
