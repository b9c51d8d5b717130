//! Command-line front end: `synth`, `train`, `sweep`, `eval`, `oracle`, `plot`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bank::{default_expert_triple, generate_synthetic, load_bank, save_bank, EmbeddingBank, ExpertSpec, Split, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, export_assignments_csv, export_frontier_svg, export_metrics_csv, read_metrics_csv, MetricsRecord, OracleReport};
use crate::oracle::{build_quantized, routed_policy_value, sample_bank, solve_optimal};
use crate::router::{HeadKind, ObservationMode, RouterNetwork};
use crate::trainer::{sweep, train, AgentKind, SweepGrid, TrainRunConfig, TrainedRouter};

pub const SEED_ENV: &str = "SRPMOE_SEED";
pub const CONFIG_ECHO: &str = "resolved_config.json";

/// Everything a subcommand may need. Every field has a default, a config
/// file overrides defaults and flags override the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub experts: Vec<ExpertSpec>,
    pub synthetic: SyntheticConfig,
    pub run: TrainRunConfig,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    /// Bin count for the `oracle` subcommand.
    pub oracle_bins: usize,
    /// Training samples drawn from the quantized problem for `oracle`.
    pub oracle_samples: usize,
    pub out: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            experts: default_expert_triple(),
            synthetic: SyntheticConfig::default(),
            run: TrainRunConfig::default(),
            lambdas: SweepGrid::default_lambdas(),
            seeds: vec![1, 2, 3],
            jobs: 1,
            oracle_bins: 16,
            oracle_samples: 20_000,
            out: None,
            bank: None,
            checkpoint: None,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "srpmoe", version, about = "Train and evaluate cost-aware expert routers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic embedding bank and save it.
    Synth(Flags),
    /// Train one router; writes a checkpoint and a training log.
    Train(Flags),
    /// Train a λ × seed grid; writes metrics CSV and frontier SVG.
    Sweep(Flags),
    /// Evaluate a checkpoint on a bank; writes metrics and assignments.
    Eval(Flags),
    /// Compare a trained router with the exact optimum of a quantized problem.
    Oracle(Flags),
    /// Render a metrics CSV as a frontier SVG.
    Plot {
        /// Metrics CSV produced by `sweep` or `eval`.
        metrics: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AgentArg {
    Dqn,
    Pg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Direct,
    Aggregated,
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// JSON config file; its values override the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (or file, for `plot`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated λ grid for `sweep`.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Comma-separated seeds for `sweep`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    agent: Option<AgentArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    aug_sigma: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    overfit_gap: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Bank manifest; without it a synthetic bank is generated.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

/// Resolves defaults ← file ← flags. `env_seed` is used only when neither
/// a flag nor the file sets a seed.
fn resolve(flags: &Flags, env_seed: Option<&str>) -> Result<CliConfig> {
    let mut cfg = CliConfig::default();
    let mut file_has_seed = false;
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        file_has_seed = value.pointer("/run/seed").is_some() || value.pointer("/synthetic/seed").is_some();
        cfg = serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }

    let seed = match (flags.seed, file_has_seed, env_seed) {
        (Some(s), _, _) => Some(s),
        (None, false, Some(text)) => {
            Some(text.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={text:?} is not an integer")))?)
        }
        _ => None,
    };
    if let Some(s) = seed {
        cfg.run.seed = s;
        cfg.synthetic.seed = s;
    }
    if let Some(l) = flags.lambda {
        cfg.run.router.cost_coefficient = l;
    }
    if let Some(ls) = &flags.lambdas {
        cfg.lambdas = ls.clone();
    }
    if let Some(ss) = &flags.seeds {
        cfg.seeds = ss.clone();
    }
    if let Some(a) = flags.agent {
        cfg.run.agent = match a {
            AgentArg::Dqn => AgentKind::Dqn,
            AgentArg::Pg => AgentKind::Pg,
        };
    }
    if let Some(m) = flags.mode {
        cfg.run.mode = match m {
            ModeArg::Direct => ObservationMode::Direct,
            ModeArg::Aggregated => ObservationMode::Aggregated,
        };
    }
    if flags.no_augment && flags.aug_sigma.is_some_and(|s| s > 0.0) {
        return Err(Error::Config("--no-augment conflicts with a positive --aug-sigma".into()));
    }
    if flags.no_augment {
        cfg.run = cfg.run.with_augmentation(None);
    } else if let Some(s) = flags.aug_sigma {
        cfg.run = cfg.run.with_augmentation(Some(s));
    }
    if let Some(n) = flags.episodes {
        cfg.run.set_episodes(n);
    }
    if let Some(g) = flags.overfit_gap {
        cfg.synthetic.overfit_gap = g;
    }
    if let Some(j) = flags.jobs {
        cfg.jobs = j;
    }
    if flags.out.is_some() {
        cfg.out = flags.out.clone();
    }
    if flags.bank.is_some() {
        cfg.bank = flags.bank.clone();
    }
    if flags.checkpoint.is_some() {
        cfg.checkpoint = flags.checkpoint.clone();
    }
    cfg.synthetic.validate()?;
    if cfg.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    Ok(cfg)
}

fn out_dir(cfg: &CliConfig, default: &str) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_echo(cfg: &CliConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join(CONFIG_ECHO), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(())
}

fn synthetic_bank(cfg: &CliConfig, seed: u64) -> Result<EmbeddingBank> {
    generate_synthetic(&SyntheticConfig { seed, ..cfg.synthetic.clone() }, &cfg.experts)
}

fn input_bank(cfg: &CliConfig) -> Result<EmbeddingBank> {
    match &cfg.bank {
        Some(path) => load_bank(path),
        None => synthetic_bank(cfg, cfg.synthetic.seed),
    }
}

/// Whether rows should be flagged as coming from an overfit bank.
fn overfit_flag(cfg: &CliConfig) -> bool {
    cfg.bank.is_none() && cfg.synthetic.overfit_gap < 1.0
}

fn cmd_synth(cfg: &CliConfig) -> Result<()> {
    let dir = out_dir(cfg, "bank")?;
    let bank = synthetic_bank(cfg, cfg.synthetic.seed)?;
    let manifest = save_bank(&bank, &dir)?;
    write_echo(cfg, &dir)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn cmd_train(cfg: &CliConfig) -> Result<()> {
    let bank = input_bank(cfg)?;
    cfg.run.validate(&bank)?;
    let dir = out_dir(cfg, "run")?;
    write_echo(cfg, &dir)?;
    let outcome = train(&cfg.run, &bank)?;
    outcome.log.write_csv(&dir.join("train_log.csv"))?;
    if let Some(reason) = &outcome.log.failed {
        fs::write(dir.join("FAILED"), format!("{reason}\n"))?;
        return Err(Error::Divergence(reason.clone()));
    }
    let path = cfg.checkpoint.clone().unwrap_or_else(|| dir.join("router.ckpt"));
    let mut w = BufWriter::new(File::create(&path)?);
    outcome.router.network.write_checkpoint(&mut w, outcome.router.mode)?;
    drop(w);
    let test = evaluate(&outcome.router, &bank, Split::Test, &cfg.run.router)?;
    println!(
        "wrote {} (test accuracy {:.1}%, {:.3} TFLOPs)",
        path.display(),
        test.accuracy,
        test.avg_tflops
    );
    Ok(())
}

fn cmd_sweep(cfg: &CliConfig) -> Result<()> {
    let grid = SweepGrid { lambdas: cfg.lambdas.clone(), seeds: cfg.seeds.clone(), template: cfg.run.clone() };
    grid.validate()?;
    let dir = out_dir(cfg, "sweep")?;
    write_echo(cfg, &dir)?;
    let fixed = match &cfg.bank {
        Some(path) => Some(Arc::new(load_bank(path)?)),
        None => None,
    };
    let records = sweep(
        &grid,
        |seed| match &fixed {
            Some(bank) => Ok(Arc::clone(bank)),
            None => Ok(Arc::new(synthetic_bank(cfg, seed)?)),
        },
        overfit_flag(cfg),
        cfg.jobs,
    )?;
    export_metrics_csv(&records, &dir.join("metrics.csv"))?;
    export_frontier_svg(&records, &dir.join("frontier.svg"))?;
    let failed = records.iter().filter(|r| r.is_failed()).count();
    println!("wrote {} rows to {}", records.len(), dir.join("metrics.csv").display());
    if failed > 0 {
        eprintln!("{failed} cell(s) failed");
    }
    Ok(())
}

fn cmd_eval(cfg: &CliConfig) -> Result<()> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::Config("eval needs --checkpoint".into()))?;
    let bank = input_bank(cfg)?;
    let mut reader = BufReader::new(File::open(path)?);
    let (network, header) = RouterNetwork::read_checkpoint(&mut reader)?;
    let dims: Vec<usize> = bank.experts().iter().map(|e| e.dim).collect();
    if network.expert_dims() != dims {
        return Err(Error::Config(format!("checkpoint expects expert dims {:?}, bank has {dims:?}", network.expert_dims())));
    }
    let router = TrainedRouter { network, mode: header.mode };
    let dir = out_dir(cfg, "eval")?;
    write_echo(cfg, &dir)?;
    let train_eval = evaluate(&router, &bank, Split::Train, &cfg.run.router)?;
    let test_eval = evaluate(&router, &bank, Split::Test, &cfg.run.router)?;
    let mut run = cfg.run.clone();
    run.mode = header.mode;
    run.agent = match header.head {
        HeadKind::Dueling => AgentKind::Dqn,
        HeadKind::Policy => AgentKind::Pg,
    };
    let mut record = MetricsRecord::failed(&run, overfit_flag(cfg));
    record.fill(train_eval.accuracy, test_eval.accuracy, test_eval.avg_tflops);
    export_metrics_csv(&[record], &dir.join("metrics.csv"))?;
    export_assignments_csv(&test_eval.assignments, &dir.join("assignments.csv"))?;
    println!("test accuracy {:.1}%, {:.3} TFLOPs", test_eval.accuracy, test_eval.avg_tflops);
    Ok(())
}

fn cmd_oracle(cfg: &CliConfig) -> Result<()> {
    let lambda = cfg.run.router.cost_coefficient;
    let mdp = build_quantized(&cfg.synthetic, &cfg.experts, cfg.oracle_bins, lambda)?;
    let optimal = solve_optimal(&mdp)?;
    let bank = sample_bank(&mdp, &cfg.experts, cfg.oracle_samples, 1, cfg.synthetic.seed)?;
    let dir = out_dir(cfg, "oracle")?;
    write_echo(cfg, &dir)?;
    let outcome = train(&cfg.run, &bank)?;
    if let Some(reason) = &outcome.log.failed {
        return Err(Error::Divergence(reason.clone()));
    }
    let learned = routed_policy_value(&mdp, &outcome.router)?;
    let report = OracleReport {
        optimal_value: optimal.value,
        learned_value: learned,
        ratio: learned / optimal.value,
        k: cfg.oracle_bins,
        lambda,
    };
    fs::write(dir.join("oracle_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("optimal {:.4}, learned {:.4}, ratio {:.4}", report.optimal_value, report.learned_value, report.ratio);
    Ok(())
}

fn cmd_plot(metrics: &Path, cfg: &CliConfig) -> Result<()> {
    let records = read_metrics_csv(metrics)?;
    let out = cfg.out.clone().unwrap_or_else(|| metrics.with_extension("svg"));
    export_frontier_svg(&records, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        _ => 2,
    }
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 for
/// usage or configuration errors, 2 for runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { 1 } else { 0 };
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let (flags, action): (&Flags, &dyn Fn(&CliConfig) -> Result<()>) = match &cli.command {
        Command::Synth(f) => (f, &cmd_synth),
        Command::Train(f) => (f, &cmd_train),
        Command::Sweep(f) => (f, &cmd_sweep),
        Command::Eval(f) => (f, &cmd_eval),
        Command::Oracle(f) => (f, &cmd_oracle),
        Command::Plot { metrics, flags } => (flags, &move |cfg: &CliConfig| cmd_plot(metrics, cfg)),
    };
    let result = resolve(flags, env_seed.as_deref()).and_then(|cfg| action(&cfg));
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
