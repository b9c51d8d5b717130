//! Trains one DQN router on a compact synthetic bank, evaluates it, and
//! round-trips the checkpoint.
//!
//!     cargo run --release --example train_router [lambda] [episodes]

use std::io::{BufReader, Cursor};

use srpmoe::bank::{generate_synthetic, Split};
use srpmoe::eval::evaluate;
use srpmoe::preset::{compact_experts, compact_run, compact_synthetic};
use srpmoe::probe::{best_probe, probe_all, ProbeConfig};
use srpmoe::router::RouterNetwork;
use srpmoe::trainer::{train, TrainedRouter};

fn main() -> srpmoe::Result<()> {
    let mut args = std::env::args().skip(1);
    let lambda: f64 = args.next().map(|s| s.parse().expect("lambda")).unwrap_or(0.2);
    let episodes: usize = args.next().map(|s| s.parse().expect("episodes")).unwrap_or(20_000);

    let bank = generate_synthetic(&compact_synthetic(1, 1.0), &compact_experts())?;
    let mut cfg = compact_run(episodes);
    cfg.router.cost_coefficient = lambda;
    cfg.seed = 1;

    let outcome = train(&cfg, &bank)?;
    for row in &outcome.log.rows {
        println!(
            "episode {:>6}  reward {:+.3}  train acc {:5.1}%  cost {:.2} TFLOPs",
            row.episode, row.mean_reward, row.train_acc_window, row.mean_cost_tflops
        );
    }

    let test = evaluate(&outcome.router, &bank, Split::Test, &cfg.router)?;
    let probe = best_probe(&probe_all(&bank, &ProbeConfig::default())).unwrap();
    println!(
        "router: {:.1}% at {:.2} TFLOPs | best single expert ({}): {:.1}% at {} TFLOPs",
        test.accuracy,
        test.avg_tflops,
        bank.experts()[probe.expert].name,
        probe.test_accuracy,
        bank.experts()[probe.expert].cost_tflops
    );

    let mut bytes = Vec::new();
    outcome.router.network.write_checkpoint(&mut bytes, outcome.router.mode)?;
    let (network, header) = RouterNetwork::read_checkpoint(&mut BufReader::new(Cursor::new(bytes)))?;
    let reloaded = TrainedRouter { network, mode: header.mode };
    let again = evaluate(&reloaded, &bank, Split::Test, &cfg.router)?;
    println!("checkpoint reload reproduces evaluation: {}", again == test);
    Ok(())
}
