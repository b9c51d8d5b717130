//! L2-regularized logistic-regression probe over one expert's embeddings.
//! Serves as the single-expert accuracy baseline routers are compared to.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::bank::{EmbeddingBank, Split};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Coefficient of `½‖w‖²` added to the mean log-loss.
    pub l2: f64,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { l2: 1e-2, iterations: 400, learning_rate: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub expert: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

fn standardized(bank: &EmbeddingBank, expert: usize, rows: &[usize], mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    let m = bank.matrix(expert);
    Array2::from_shape_fn((rows.len(), m.ncols()), |(r, c)| (m[[rows[r], c]] as f64 - mean[c]) / std[c])
}

fn accuracy(x: &Array2<f64>, labels: &[f64], w: &Array1<f64>, b: f64) -> f64 {
    let scores = x.dot(w);
    let correct = scores.iter().zip(labels).filter(|(&s, &y)| ((s + b) > 0.0) == (y > 0.5)).count();
    100.0 * correct as f64 / labels.len() as f64
}

/// Trains a probe on the train split (features standardized with train
/// statistics) by full-batch gradient descent; reports accuracy in percent.
pub fn linear_probe(bank: &EmbeddingBank, expert: usize, cfg: &ProbeConfig) -> ProbeResult {
    let train = bank.indices(Split::Train);
    let test = bank.indices(Split::Test);
    let m = bank.matrix(expert);
    let dim = m.ncols();
    let mean = Array1::from_shape_fn(dim, |c| train.iter().map(|&r| m[[r, c]] as f64).sum::<f64>() / train.len() as f64);
    let std = Array1::from_shape_fn(dim, |c| {
        let var = train.iter().map(|&r| (m[[r, c]] as f64 - mean[c]).powi(2)).sum::<f64>() / train.len() as f64;
        if var > 0.0 {
            var.sqrt()
        } else {
            1.0
        }
    });
    let x_train = standardized(bank, expert, &train, &mean, &std);
    let x_test = standardized(bank, expert, &test, &mean, &std);
    let y_train: Vec<f64> = train.iter().map(|&i| bank.label(i) as f64).collect();
    let y_test: Vec<f64> = test.iter().map(|&i| bank.label(i) as f64).collect();
    let y = Array1::from(y_train.clone());

    let n = train.len() as f64;
    let mut w = Array1::<f64>::zeros(dim);
    let mut b = 0.0;
    for _ in 0..cfg.iterations {
        let mut residual = x_train.dot(&w);
        residual.mapv_inplace(|s| 1.0 / (1.0 + (-(s + b)).exp()));
        residual -= &y;
        let grad_w = x_train.t().dot(&residual) / n + cfg.l2 * &w;
        let grad_b = residual.sum_axis(Axis(0)).into_scalar() / n;
        w.scaled_add(-cfg.learning_rate, &grad_w);
        b -= cfg.learning_rate * grad_b;
    }

    ProbeResult {
        expert,
        train_accuracy: accuracy(&x_train, &y_train, &w, b),
        test_accuracy: accuracy(&x_test, &y_test, &w, b),
    }
}

/// Probes every expert in the bank.
pub fn probe_all(bank: &EmbeddingBank, cfg: &ProbeConfig) -> Vec<ProbeResult> {
    (0..bank.num_experts()).map(|e| linear_probe(bank, e, cfg)).collect()
}

/// The probe with the highest test accuracy.
pub fn best_probe(results: &[ProbeResult]) -> Option<ProbeResult> {
    results.iter().copied().max_by(|a, b| a.test_accuracy.total_cmp(&b.test_accuracy))
}
