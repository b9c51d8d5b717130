//! Sweeps the cost coefficient and writes the metrics CSV, the frontier SVG
//! and per-λ expert assignments.
//!
//!     cargo run --release --example cost_sweep [out_dir] [episodes]

use std::sync::Arc;

use srpmoe::bank::generate_synthetic;
use srpmoe::eval::{export_assignments_csv, export_frontier_svg, export_metrics_csv};
use srpmoe::preset::{compact_experts, compact_run, compact_synthetic};
use srpmoe::trainer::{sweep_detailed, SweepGrid};

fn main() -> srpmoe::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("srpmoe-sweep"));
    let episodes: usize = args.next().map(|s| s.parse().expect("episodes")).unwrap_or(10_000);
    std::fs::create_dir_all(&out)?;

    let experts = compact_experts();
    let grid = SweepGrid { lambdas: SweepGrid::default_lambdas(), seeds: vec![1], template: compact_run(episodes) };
    let cells = sweep_detailed(&grid, |seed| Ok(Arc::new(generate_synthetic(&compact_synthetic(seed, 1.0), &experts)?)), false, 1)?;

    println!("{:>6} {:>9} {:>9} {:>11}", "lambda", "test acc", "TFLOPs", "acc/TFLOP");
    for cell in &cells {
        let r = &cell.record;
        println!("{:>6.1} {:>8.1}% {:>9.2} {:>11.1}", r.lambda, r.test_acc, r.avg_tflops, r.acc_per_tflop);
        export_assignments_csv(&cell.test_assignments, &out.join(format!("assignments_lambda{:.1}.csv", r.lambda)))?;
    }
    let records: Vec<_> = cells.into_iter().map(|c| c.record).collect();
    export_metrics_csv(&records, &out.join("metrics.csv"))?;
    export_frontier_svg(&records, &out.join("frontier.svg"))?;
    println!("wrote {}", out.display());
    Ok(())
}
