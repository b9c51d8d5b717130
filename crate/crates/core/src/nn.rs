//! Dense feed-forward networks with manual reverse-mode gradients, an
//! adaptive-moment optimizer and a finite-difference gradient checker.
//!
//! Everything is `f64`. Layers compute `act(x Wᵀ + b)` with `W` stored as
//! `out × in`. Batched passes take row-major `batch × in` matrices.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};

/// Magic bytes opening every network checkpoint section.
pub const CHECKPOINT_MAGIC: &[u8; 6] = b"SRPNN1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Linear),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }

    fn apply_inplace(self, values: &mut Array2<f64>) {
        if self == Activation::Tanh {
            values.mapv_inplace(f64::tanh);
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed through the
    /// activation's output.
    fn backprop_inplace(self, output: &Array2<f64>, grad: &mut Array2<f64>) {
        if self == Activation::Tanh {
            Zip::from(grad).and(output).for_each(|g, &y| *g *= 1.0 - y * y);
        }
    }
}

/// One affine layer followed by an elementwise activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    /// Symmetric uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weight = Array2::from_shape_fn((output, input), |_| rng.random_range(-limit..=limit));
        Layer { weight, bias: Array1::zeros(output), activation }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Layer { weight: Array2::zeros((output, input)), bias: Array1::zeros(output), activation }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        self.activation.apply_inplace(&mut out);
        out
    }

    /// Backward pass for a batch given the layer's input, its output and the
    /// gradient w.r.t. that output. Returns parameter gradients and the
    /// gradient w.r.t. the input.
    pub fn backward_batch(
        &self,
        input: ArrayView2<f64>,
        output: &Array2<f64>,
        mut upstream: Array2<f64>,
    ) -> (LayerGrad, Array2<f64>) {
        self.activation.backprop_inplace(output, &mut upstream);
        let weight = upstream.t().dot(&input);
        let bias = upstream.sum_axis(Axis(0));
        let input_grad = upstream.dot(&self.weight);
        (LayerGrad { weight, bias }, input_grad)
    }

    fn all_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Gradient (or moment accumulator) with the shape of one [`Layer`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &Layer) -> Self {
        LayerGrad { weight: Array2::zeros(layer.weight.raw_dim()), bias: Array1::zeros(layer.bias.len()) }
    }

    pub fn add_assign(&mut self, other: &LayerGrad) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }

    pub fn scale(&mut self, factor: f64) {
        self.weight *= factor;
        self.bias *= factor;
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }
}

/// Anything made of an ordered list of [`Layer`]s.
pub trait Parameters {
    fn layers(&self) -> Vec<&Layer>;
    fn layers_mut(&mut self) -> Vec<&mut Layer>;

    fn zero_grads(&self) -> Vec<LayerGrad> {
        self.layers().into_iter().map(LayerGrad::zeros_like).collect()
    }

    fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }
}

/// Plain multilayer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Activations recorded by [`DenseNet::forward_tape`]; entry 0 is the input.
#[derive(Clone, Debug)]
pub struct Tape {
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("tape always holds the input")
    }
}

/// Parameter gradients plus the gradient w.r.t. the network input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Array1<f64>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape("network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(shape(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(shape(format!("layer {k} bias length mismatch")));
            }
            if !layer.all_finite() {
                return Err(Error::Data(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(DenseNet { layers })
    }

    /// Builds `dims[0] → dims[1] → … → dims[n]`, `hidden` on every layer but
    /// the last, which uses `output`.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(shape("mlp needs at least input and output dims"));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Layer::init(dims[k], dims[k + 1], act, rng)
            })
            .collect();
        DenseNet::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let batch = ArrayView2::from_shape((1, x.len()), x).map_err(|e| shape(e.to_string()))?;
        Ok(self.forward_batch(batch).into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut current = self.layers[0].forward_batch(x);
        for layer in &self.layers[1..] {
            current = layer.forward_batch(current.view());
        }
        current
    }

    pub fn forward_tape(&self, x: Array2<f64>) -> Tape {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x);
        for layer in &self.layers {
            let next = layer.forward_batch(activations.last().unwrap().view());
            activations.push(next);
        }
        Tape { activations }
    }

    /// Reverse pass over a recorded tape. `upstream` is `batch × output_dim`.
    pub fn backward_tape(&self, tape: &Tape, upstream: Array2<f64>) -> (Vec<LayerGrad>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut grad = upstream;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let (g, input_grad) = layer.backward_batch(tape.activations[k].view(), &tape.activations[k + 1], grad);
            grads.push(g);
            grad = input_grad;
        }
        grads.reverse();
        (grads, grad)
    }

    /// Gradients of a scalar loss whose gradient w.r.t. the output is `upstream`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Gradients> {
        self.check_input(x.len())?;
        if upstream.len() != self.output_dim() {
            return Err(shape(format!("upstream gradient has {} values, expected {}", upstream.len(), self.output_dim())));
        }
        let input = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| shape(e.to_string()))?;
        let tape = self.forward_tape(input);
        let up = Array2::from_shape_vec((1, upstream.len()), upstream.to_vec()).map_err(|e| shape(e.to_string()))?;
        let (layers, input_grad) = self.backward_tape(&tape, up);
        Ok(Gradients { layers, input: input_grad.row(0).to_owned() })
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(shape(format!("input has {len} values, network expects {}", self.input_dim())));
        }
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        write_layers(w, &self.layers)
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        DenseNet::new(read_layers(r)?)
    }
}

impl Parameters for DenseNet {
    fn layers(&self) -> Vec<&Layer> {
        self.layers.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        self.layers.iter_mut().collect()
    }
}

/// Writes one checkpoint section: magic, layer count, then per layer
/// `in`, `out`, activation code and row-major `W` followed by `b`.
pub fn write_layers<W: Write>(w: &mut W, layers: &[Layer]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for layer in layers {
        w.write_all(&(layer.input_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.output_dim() as u32).to_le_bytes())?;
        w.write_all(&[layer.activation.code()])?;
        for v in layer.weight.iter().chain(layer.bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_layers<R: Read>(r: &mut R) -> Result<Vec<Layer>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let count = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let input = read_u32(r)? as usize;
        let output = read_u32(r)? as usize;
        let mut code = [0u8; 1];
        r.read_exact(&mut code).map_err(|_| Error::Format("truncated layer header".into()))?;
        let activation = Activation::from_code(code[0])?;
        let weight = read_f64s(r, input * output)?;
        let bias = read_f64s(r, output)?;
        let weight = Array2::from_shape_vec((output, input), weight).map_err(|e| Error::Format(e.to_string()))?;
        layers.push(Layer { weight, bias: Array1::from(bias), activation });
    }
    Ok(layers)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated checkpoint values".into()))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Adaptive-moment optimizer hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment accumulators mirroring a parameter set.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: Vec<LayerGrad>,
    second: Vec<LayerGrad>,
    step: u64,
}

impl OptimizerState {
    pub fn new<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        for beta in [config.beta1, config.beta2] {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::Config("moment decay rates must lie in (0, 1)".into()));
            }
        }
        Ok(OptimizerState { config, first: params.zero_grads(), second: params.zero_grads(), step: 0 })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[LayerGrad] {
        &self.first
    }

    pub fn second_moments(&self) -> &[LayerGrad] {
        &self.second
    }

    /// Applies one bias-corrected adaptive-moment update. Rejects the update
    /// (leaving parameters and moments untouched) if any gradient is non-finite.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &[LayerGrad]) -> Result<()> {
        let mut layers = params.layers_mut();
        if layers.len() != grads.len() || layers.len() != self.first.len() {
            return Err(shape("gradient list does not match parameter list"));
        }
        for (k, (layer, grad)) in layers.iter().zip(grads).enumerate() {
            if layer.weight.raw_dim() != grad.weight.raw_dim() || layer.bias.len() != grad.bias.len() {
                return Err(shape(format!("gradient {k} shape does not match its layer")));
            }
        }
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient in layer {k}")));
        }

        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        };
        for (((layer, grad), m), v) in layers.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            Zip::from(&mut layer.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&grad.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&grad.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

/// Central-difference gradient of `loss` over every parameter of `model`.
pub fn numeric_gradient<P, F>(model: &P, epsilon: f64, mut loss: F) -> Vec<LayerGrad>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    let mut probe = model.clone();
    let mut grads = model.zero_grads();
    for (li, grad) in grads.iter_mut().enumerate() {
        let (rows, cols) = grad.weight.dim();
        for r in 0..rows {
            for c in 0..cols {
                let original = probe.layers()[li].weight[[r, c]];
                probe.layers_mut()[li].weight[[r, c]] = original + epsilon;
                let plus = loss(&probe);
                probe.layers_mut()[li].weight[[r, c]] = original - epsilon;
                let minus = loss(&probe);
                probe.layers_mut()[li].weight[[r, c]] = original;
                grad.weight[[r, c]] = (plus - minus) / (2.0 * epsilon);
            }
        }
        for j in 0..grad.bias.len() {
            let original = probe.layers()[li].bias[j];
            probe.layers_mut()[li].bias[j] = original + epsilon;
            let plus = loss(&probe);
            probe.layers_mut()[li].bias[j] = original - epsilon;
            let minus = loss(&probe);
            probe.layers_mut()[li].bias[j] = original;
            grad.bias[j] = (plus - minus) / (2.0 * epsilon);
        }
    }
    grads
}

/// Denominator floor for the relative error, so entries that are zero in
/// both gradients compare as equal instead of dividing roundoff by zero.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)` across two gradient sets.
pub fn max_relative_error(analytic: &[LayerGrad], numeric: &[LayerGrad]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.values().zip(n.values()))
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

/// Compares [`DenseNet::backward`] against central differences for a scalar
/// loss. `loss` maps a network output to `(value, d value / d output)`.
pub fn grad_check<F>(net: &DenseNet, x: &[f64], loss: F) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    grad_check_with_epsilon(net, x, 1e-4, loss)
}

pub fn grad_check_with_epsilon<F>(net: &DenseNet, x: &[f64], epsilon: f64, loss: F) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let output = net.forward(x)?;
    let (_, upstream) = loss(&output);
    let analytic = net.backward(x, &upstream)?;
    let numeric = numeric_gradient(net, epsilon, |candidate| {
        let y = candidate.forward(x).expect("input shape already validated");
        loss(&y).0
    });
    Ok(max_relative_error(&analytic.layers, &numeric))
}
