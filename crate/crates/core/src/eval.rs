//! Greedy evaluation, metrics rows and exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::{EmbeddingBank, Split};
use crate::env::{self, valid_action_mask, Action, EnvState, ExpertSet, Observation, RouterConfig};
use crate::error::{Error, Result};
use crate::trainer::TrainRunConfig;

/// Anything that can pick an action index given the episode state.
///
/// Learned routers only look at `obs`; test policies may peek at `state`.
pub trait RoutingPolicy {
    fn decide(&self, state: &EnvState, obs: &Observation, mask: &[bool]) -> Result<usize>;
}

impl<F> RoutingPolicy for F
where
    F: Fn(&EnvState, &Observation, &[bool]) -> Result<usize>,
{
    fn decide(&self, state: &EnvState, obs: &Observation, mask: &[bool]) -> Result<usize> {
        self(state, obs, mask)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub sample_id: usize,
    pub latent: Option<[f32; 2]>,
    pub label: u8,
    pub pred: u8,
    pub experts: ExpertSet,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Percent correct, rounded to one decimal.
    pub accuracy: f64,
    pub avg_tflops: f64,
    pub assignments: Vec<AssignmentRecord>,
}

/// Round to one decimal, the precision accuracies are reported at.
pub fn round_accuracy(percent: f64) -> f64 {
    (percent * 10.0).round() / 10.0
}

/// One greedy rollout per sample of `split`.
pub fn evaluate<P: RoutingPolicy + ?Sized>(
    policy: &P,
    bank: &EmbeddingBank,
    split: Split,
    cfg: &RouterConfig,
) -> Result<Evaluation> {
    let samples = bank.indices(split);
    if samples.is_empty() {
        return Err(Error::Contract(format!("{} split is empty", split.as_str())));
    }
    let num_experts = bank.num_experts();
    let horizon = cfg.horizon(num_experts);
    let mut assignments = Vec::with_capacity(samples.len());
    for sample in samples {
        let (mut state, mut obs) = env::reset(bank, cfg, sample)?;
        let pred = loop {
            let mask = valid_action_mask(&state, num_experts, horizon);
            let index = policy.decide(&state, &obs, &mask)?;
            let action = Action::from_index(index, num_experts)?;
            let result = env::step(&mut state, action, bank, cfg)?;
            if let Action::Classify(label) = action {
                break label;
            }
            obs = result.next_observation;
        };
        assignments.push(AssignmentRecord {
            sample_id: sample,
            latent: bank.latent_of(sample),
            label: bank.label(sample),
            pred,
            experts: state.activated,
            cost: env::episode_cost(&state),
        });
    }
    let n = assignments.len() as f64;
    let correct = assignments.iter().filter(|a| a.pred == a.label).count();
    let avg_tflops = assignments.iter().map(|a| a.cost).sum::<f64>() / n;
    Ok(Evaluation { accuracy: round_accuracy(100.0 * correct as f64 / n), avg_tflops, assignments })
}

/// Accuracy (%) per TFLOP.
pub fn acc_per_cost(accuracy: f64, avg_tflops: f64) -> Result<f64> {
    if !(avg_tflops > 0.0) {
        return Err(Error::Contract("average cost must be positive".into()));
    }
    Ok(accuracy / avg_tflops)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub lambda: f64,
    pub seed: u64,
    pub agent: String,
    pub mode: String,
    pub augment: bool,
    pub overfit: bool,
    pub train_acc: f64,
    pub test_acc: f64,
    pub avg_tflops: f64,
    pub acc_per_tflop: f64,
    pub episodes: usize,
}

impl MetricsRecord {
    /// A row with NaN metrics, used as-is for cells whose run failed.
    pub fn failed(cfg: &TrainRunConfig, overfit: bool) -> Self {
        MetricsRecord {
            lambda: cfg.router.cost_coefficient,
            seed: cfg.seed,
            agent: cfg.agent.as_str().to_string(),
            mode: cfg.mode.as_str().to_string(),
            augment: cfg.augment,
            overfit,
            train_acc: f64::NAN,
            test_acc: f64::NAN,
            avg_tflops: f64::NAN,
            acc_per_tflop: f64::NAN,
            episodes: cfg.episodes(),
        }
    }

    pub fn fill(&mut self, train_acc: f64, test_acc: f64, avg_tflops: f64) {
        self.train_acc = train_acc;
        self.test_acc = test_acc;
        self.avg_tflops = avg_tflops;
        self.acc_per_tflop = acc_per_cost(test_acc, avg_tflops).unwrap_or(f64::NAN);
    }

    pub fn is_failed(&self) -> bool {
        self.test_acc.is_nan()
    }
}

/// Six significant digits, no exponent for the magnitudes seen here.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    if !(-5..=15).contains(&magnitude) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

pub const METRICS_HEADER: [&str; 11] = [
    "lambda",
    "seed",
    "agent",
    "mode",
    "augment",
    "overfit",
    "train_acc",
    "test_acc",
    "avg_tflops",
    "acc_per_tflop",
    "episodes",
];

pub fn export_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Contract("no records to export".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record([
            format_sig6(r.lambda),
            r.seed.to_string(),
            r.agent.clone(),
            r.mode.clone(),
            r.augment.to_string(),
            r.overfit.to_string(),
            format_sig6(r.train_acc),
            format_sig6(r.test_acc),
            format_sig6(r.avg_tflops),
            format_sig6(r.acc_per_tflop),
            r.episodes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Format(format!("unexpected metrics header {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn export_assignments_csv(records: &[AssignmentRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "x", "y", "label", "pred", "experts", "cost"])?;
    for a in records {
        let (x, y) = match a.latent {
            Some([x, y]) => (x.to_string(), y.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            a.sample_id.to_string(),
            x,
            y,
            a.label.to_string(),
            a.pred.to_string(),
            a.experts.bits().to_string(),
            format_sig6(a.cost),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

fn series_key(r: &MetricsRecord) -> String {
    let mut key = format!("{} {}", r.agent, r.mode);
    if !r.augment {
        key.push_str(" no-aug");
    }
    if r.overfit {
        key.push_str(" overfit");
    }
    key
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-9 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.08 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Standalone SVG scatter of (avg TFLOPs, test accuracy); failed cells are
/// skipped, one `<circle>` per remaining record.
pub fn frontier_svg(records: &[MetricsRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Contract("no records to plot".into()));
    }
    let points: Vec<&MetricsRecord> = records.iter().filter(|r| !r.is_failed()).collect();
    let mut series: Vec<String> = Vec::new();
    for r in &points {
        let key = series_key(r);
        if !series.contains(&key) {
            series.push(key);
        }
    }
    let (x_lo, x_hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.avg_tflops), hi.max(r.avg_tflops))
    });
    let (y_lo, y_hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.test_acc), hi.max(r.test_acc)));
    let (x_lo, x_hi) = if points.is_empty() { (0.0, 1.0) } else { nice_range(x_lo, x_hi) };
    let (y_lo, y_hi) = if points.is_empty() { (0.0, 100.0) } else { nice_range(y_lo, y_hi) };

    let (left, right, top, bottom) = (80.0, 760.0, 40.0, 520.0);
    let sx = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * (right - left);
    let sy = |y: f64| bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top);

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"800\" height=\"600\" viewBox=\"0 0 800 600\">\n",
    );
    s.push_str("<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n");
    let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{bottom}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{bottom}\" stroke=\"black\"/>");
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let yv = y_lo + t * (y_hi - y_lo);
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{:.2}</text>",
            sx(xv),
            bottom + 18.0,
            xv
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{:.1}</text>",
            left - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    s.push_str("<text x=\"420\" y=\"570\" font-size=\"14\" text-anchor=\"middle\">Average TFLOPs</text>\n");
    s.push_str(
        "<text x=\"20\" y=\"280\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 20 280)\">Test accuracy (%)</text>\n",
    );
    for (i, key) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(s, "<g class=\"legend\"><rect x=\"600\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>", ly - 9.0);
        let _ = writeln!(s, "<text x=\"616\" y=\"{ly:.1}\" font-size=\"12\">{key}</text></g>");
    }
    for r in &points {
        let idx = series.iter().position(|k| *k == series_key(r)).unwrap();
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"{}\"><title>lambda={} seed={}</title></circle>",
            sx(r.avg_tflops),
            sy(r.test_acc),
            PALETTE[idx % PALETTE.len()],
            format_sig6(r.lambda),
            r.seed
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn export_frontier_svg(records: &[MetricsRecord], path: &Path) -> Result<()> {
    fs::write(path, frontier_svg(records)?)?;
    Ok(())
}

/// `{optimal_value, learned_value, ratio, K, lambda}` as written by the oracle check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub optimal_value: f64,
    pub learned_value: f64,
    pub ratio: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda: f64,
}
