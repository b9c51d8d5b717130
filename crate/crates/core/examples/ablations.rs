//! Runs the design ablations side by side at a few cost coefficients:
//! DQN vs PPO, augmentation on/off, and a bank whose largest expert is
//! cleaner on the train split than on the test split.
//!
//!     cargo run --release --example ablations [episodes]

use std::sync::Arc;

use srpmoe::bank::generate_synthetic;
use srpmoe::eval::MetricsRecord;
use srpmoe::preset::{compact_experts, compact_run, compact_synthetic};
use srpmoe::trainer::{sweep, AgentKind, SweepGrid, TrainRunConfig};

fn run(template: TrainRunConfig, overfit_gap: f64) -> srpmoe::Result<Vec<MetricsRecord>> {
    let experts = compact_experts();
    let grid = SweepGrid { lambdas: vec![0.0, 0.2, 0.4], seeds: vec![1], template };
    sweep(&grid, |seed| Ok(Arc::new(generate_synthetic(&compact_synthetic(seed, overfit_gap), &experts)?)), overfit_gap < 1.0, 1)
}

fn report(name: &str, records: &[MetricsRecord]) {
    for r in records {
        println!(
            "{name:<12} lambda {:.1}  train {:5.1}%  test {:5.1}%  gap {:+5.1}  {:.2} TFLOPs",
            r.lambda,
            r.train_acc,
            r.test_acc,
            r.train_acc - r.test_acc,
            r.avg_tflops
        );
    }
}

fn main() -> srpmoe::Result<()> {
    let episodes: usize = std::env::args().nth(1).map(|s| s.parse().expect("episodes")).unwrap_or(10_000);
    let base = compact_run(episodes);

    report("dqn", &run(base.clone(), 1.0)?);
    report("ppo", &run(TrainRunConfig { agent: AgentKind::Pg, ..base.clone() }, 1.0)?);
    report("no-augment", &run(base.clone().with_augmentation(None), 1.0)?);
    report("overfit-bank", &run(base, 0.3)?);
    Ok(())
}
