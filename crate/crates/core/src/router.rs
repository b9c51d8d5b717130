//! Router network: a learnable affine projection per expert into a shared
//! observation space, a tanh trunk, and two linear heads. With
//! [`HeadKind::Dueling`] the heads are state value and action advantages;
//! with [`HeadKind::Policy`] they are state value and action logits.

use std::io::{BufRead, Read, Write};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{num_actions, Observation};
use crate::error::{shape, Error, Result};
use crate::nn::{read_layers, write_layers, Activation, DenseNet, Layer, LayerGrad, Parameters, Tape};

/// Width of both trunk layers.
pub const HIDDEN_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObservationMode {
    /// Only the most recently activated expert's projected embedding.
    #[default]
    Direct,
    /// Mean of all activated experts' projected embeddings.
    Aggregated,
}

impl ObservationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservationMode::Direct => "direct",
            ObservationMode::Aggregated => "aggregated",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Dueling,
    Policy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouterNetwork {
    projections: Vec<Layer>,
    trunk: DenseNet,
    value_head: Layer,
    action_head: Layer,
    kind: HeadKind,
}

/// Rows of one expert's embeddings gathered from a batch, with the batch
/// row each one feeds and its mixing weight.
#[derive(Clone, Debug)]
struct ProjectionGroup {
    expert: usize,
    targets: Vec<(usize, f64)>,
    inputs: Array2<f64>,
}

/// Forward pass record needed for backpropagation.
#[derive(Clone, Debug)]
pub struct RouterPass {
    groups: Vec<ProjectionGroup>,
    tape: Tape,
    /// `V(s)` per batch row.
    pub value: Array1<f64>,
    /// Raw action-head output (advantages or logits), `batch × actions`.
    pub head: Array2<f64>,
}

impl RouterPass {
    pub fn batch_size(&self) -> usize {
        self.value.len()
    }

    /// Dueling combination `V + A − mean(A)`.
    pub fn q_values(&self) -> Array2<f64> {
        dueling_combine(&self.value, &self.head)
    }
}

pub fn dueling_combine(value: &Array1<f64>, advantage: &Array2<f64>) -> Array2<f64> {
    assert_eq!(value.len(), advantage.nrows(), "one state value per advantage row");
    let mean = advantage.mean_axis(Axis(1)).expect("at least one action");
    let mut q = advantage.clone();
    for (mut row, (&v, &m)) in q.rows_mut().into_iter().zip(value.iter().zip(mean.iter())) {
        row.mapv_inplace(|a| v + a - m);
    }
    q
}

impl RouterNetwork {
    pub fn new<R: Rng + ?Sized>(expert_dims: &[usize], obs_dim: usize, kind: HeadKind, rng: &mut R) -> Result<Self> {
        Self::with_hidden(expert_dims, obs_dim, HIDDEN_SIZE, kind, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(
        expert_dims: &[usize],
        obs_dim: usize,
        hidden: usize,
        kind: HeadKind,
        rng: &mut R,
    ) -> Result<Self> {
        if expert_dims.is_empty() || obs_dim == 0 || hidden == 0 {
            return Err(Error::Config("router needs experts, obs_dim > 0 and hidden > 0".into()));
        }
        let projections = expert_dims.iter().map(|&d| Layer::init(d, obs_dim, Activation::Linear, rng)).collect();
        let trunk = DenseNet::mlp(&[obs_dim, hidden, hidden], Activation::Tanh, Activation::Tanh, rng)?;
        let value_head = Layer::init(hidden, 1, Activation::Linear, rng);
        let action_head = Layer::init(hidden, num_actions(expert_dims.len()), Activation::Linear, rng);
        Ok(RouterNetwork { projections, trunk, value_head, action_head, kind })
    }

    pub fn from_parts(
        projections: Vec<Layer>,
        trunk: DenseNet,
        value_head: Layer,
        action_head: Layer,
        kind: HeadKind,
    ) -> Result<Self> {
        if projections.is_empty() {
            return Err(shape("router needs at least one projection"));
        }
        let obs_dim = trunk.input_dim();
        if projections.iter().any(|p| p.output_dim() != obs_dim || p.activation != Activation::Linear) {
            return Err(shape("every projection must be linear into the trunk's input dim"));
        }
        let hidden = trunk.output_dim();
        if value_head.activation != Activation::Linear || action_head.activation != Activation::Linear {
            return Err(shape("router heads must be linear"));
        }
        if value_head.input_dim() != hidden || value_head.output_dim() != 1 {
            return Err(shape("value head must map the trunk output to one value"));
        }
        if action_head.input_dim() != hidden || action_head.output_dim() != num_actions(projections.len()) {
            return Err(shape("action head must map the trunk output to 2 + E actions"));
        }
        Ok(RouterNetwork { projections, trunk, value_head, action_head, kind })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn num_experts(&self) -> usize {
        self.projections.len()
    }

    pub fn num_actions(&self) -> usize {
        self.action_head.output_dim()
    }

    pub fn expert_dims(&self) -> Vec<usize> {
        self.projections.iter().map(Layer::input_dim).collect()
    }

    pub fn projection(&self, expert: usize) -> &Layer {
        &self.projections[expert]
    }

    pub fn projection_mut(&mut self, expert: usize) -> &mut Layer {
        &mut self.projections[expert]
    }

    pub fn value_head_mut(&mut self) -> &mut Layer {
        &mut self.value_head
    }

    pub fn action_head_mut(&mut self) -> &mut Layer {
        &mut self.action_head
    }

    fn selected<'a>(
        &self,
        obs: &'a Observation,
        mode: ObservationMode,
    ) -> Result<Vec<(&'a crate::env::ObservedEmbedding, f64)>> {
        if obs.is_empty() {
            return Err(Error::Contract("observation has no activated experts".into()));
        }
        let picked: Vec<_> = match mode {
            ObservationMode::Direct => vec![(obs.last().unwrap(), 1.0)],
            ObservationMode::Aggregated => {
                let w = 1.0 / obs.len() as f64;
                obs.entries().iter().map(|e| (e, w)).collect()
            }
        };
        for (entry, _) in &picked {
            let p = self
                .projections
                .get(entry.expert)
                .ok_or_else(|| Error::Contract(format!("unknown expert id {}", entry.expert)))?;
            if p.input_dim() != entry.values.len() {
                return Err(shape(format!(
                    "expert {} embedding has {} values, projection expects {}",
                    entry.expert,
                    entry.values.len(),
                    p.input_dim()
                )));
            }
        }
        Ok(picked)
    }

    fn encode(&self, batch: &[&Observation], mode: ObservationMode) -> Result<(Array2<f64>, Vec<ProjectionGroup>)> {
        let mut members: Vec<Vec<(usize, f64, &[f64])>> = vec![Vec::new(); self.num_experts()];
        for (row, obs) in batch.iter().enumerate() {
            for (entry, w) in self.selected(obs, mode)? {
                members[entry.expert].push((row, w, &entry.values));
            }
        }
        let mut encoded = Array2::<f64>::zeros((batch.len(), self.obs_dim()));
        let mut groups = Vec::new();
        for (expert, rows) in members.into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let dim = self.projections[expert].input_dim();
            let mut inputs = Array2::<f64>::zeros((rows.len(), dim));
            for (k, (_, _, values)) in rows.iter().enumerate() {
                inputs.row_mut(k).assign(&ndarray::ArrayView1::from(*values));
            }
            let projected = self.projections[expert].forward_batch(inputs.view());
            for (k, &(row, w, _)) in rows.iter().enumerate() {
                encoded.row_mut(row).scaled_add(w, &projected.row(k));
            }
            groups.push(ProjectionGroup { expert, targets: rows.iter().map(|&(r, w, _)| (r, w)).collect(), inputs });
        }
        Ok((encoded, groups))
    }

    /// Projected observation vector (length `obs_dim`) for one observation.
    pub fn observe(&self, obs: &Observation, mode: ObservationMode) -> Result<Vec<f64>> {
        let (encoded, _) = self.encode(&[obs], mode)?;
        Ok(encoded.row(0).to_vec())
    }

    pub fn forward_batch(&self, batch: &[&Observation], mode: ObservationMode) -> Result<RouterPass> {
        let (encoded, groups) = self.encode(batch, mode)?;
        let tape = self.trunk.forward_tape(encoded);
        let hidden = tape.output();
        let value = self.value_head.forward_batch(hidden.view()).column(0).to_owned();
        let head = self.action_head.forward_batch(hidden.view());
        Ok(RouterPass { groups, tape, value, head })
    }

    /// Gradients for all parameters given upstream gradients w.r.t. the value
    /// output (`batch`) and the raw action-head output (`batch × actions`).
    pub fn backward(&self, pass: &RouterPass, d_value: &Array1<f64>, d_head: &Array2<f64>) -> Vec<LayerGrad> {
        let hidden = pass.tape.output();
        let d_value_col = d_value.clone().insert_axis(Axis(1));
        let value_out = Array2::zeros((0, 0));
        let (g_value, dh_value) = self.value_head.backward_batch(hidden.view(), &value_out, d_value_col);
        let (g_action, dh_action) = self.action_head.backward_batch(hidden.view(), &value_out, d_head.clone());
        let (g_trunk, d_encoded) = self.trunk.backward_tape(&pass.tape, dh_value + dh_action);

        let mut g_proj: Vec<LayerGrad> = self.projections.iter().map(LayerGrad::zeros_like).collect();
        for group in &pass.groups {
            let mut upstream = Array2::<f64>::zeros((group.targets.len(), self.obs_dim()));
            for (k, &(row, w)) in group.targets.iter().enumerate() {
                upstream.row_mut(k).scaled_add(w, &d_encoded.row(row));
            }
            let g = &mut g_proj[group.expert];
            g.weight = upstream.t().dot(&group.inputs);
            g.bias = upstream.sum_axis(Axis(0));
        }

        let mut grads = g_proj;
        grads.extend(g_trunk);
        grads.push(g_value);
        grads.push(g_action);
        grads
    }

    /// Backward pass for a loss expressed on dueling Q-values.
    pub fn backward_q(&self, pass: &RouterPass, d_q: &Array2<f64>) -> Vec<LayerGrad> {
        // Q_a = V + A_a − mean(A): dV = Σ_a dQ_a, dA_a = dQ_a − mean(dQ).
        let d_value = d_q.sum_axis(Axis(1));
        let mean = d_q.mean_axis(Axis(1)).expect("at least one action");
        let mut d_adv = d_q.clone();
        for (mut row, &m) in d_adv.rows_mut().into_iter().zip(mean.iter()) {
            row.mapv_inplace(|g| g - m);
        }
        self.backward(pass, &d_value, &d_adv)
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W, mode: ObservationMode) -> Result<()> {
        let header = CheckpointHeader {
            obs_dim: self.obs_dim(),
            experts: self.expert_dims().into_iter().enumerate().map(|(id, dim)| ExpertDim { id, dim }).collect(),
            mode,
            head: self.kind,
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for p in &self.projections {
            write_layers(w, std::slice::from_ref(p))?;
        }
        self.trunk.write_checkpoint(w)?;
        write_layers(w, std::slice::from_ref(&self.value_head))?;
        write_layers(w, std::slice::from_ref(&self.action_head))?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<(Self, CheckpointHeader)> {
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&line).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut projections = Vec::with_capacity(header.experts.len());
        for (k, e) in header.experts.iter().enumerate() {
            if e.id != k {
                return Err(Error::Format("checkpoint expert ids must be 0..E-1".into()));
            }
            let layer = single_layer(r)?;
            if layer.input_dim() != e.dim || layer.output_dim() != header.obs_dim {
                return Err(Error::Format(format!("projection {k} does not match the header")));
            }
            projections.push(layer);
        }
        let trunk = DenseNet::read_checkpoint(r)?;
        let value_head = single_layer(r)?;
        let action_head = single_layer(r)?;
        let net = RouterNetwork::from_parts(projections, trunk, value_head, action_head, header.head)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok((net, header))
    }
}

fn single_layer<R: Read>(r: &mut R) -> Result<Layer> {
    let mut layers = read_layers(r)?;
    if layers.len() != 1 {
        return Err(Error::Format("expected a single-layer section".into()));
    }
    Ok(layers.pop().unwrap())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertDim {
    pub id: usize,
    pub dim: usize,
}

/// JSON line preceding the binary sections of a router checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub obs_dim: usize,
    pub experts: Vec<ExpertDim>,
    pub mode: ObservationMode,
    pub head: HeadKind,
}

impl Parameters for RouterNetwork {
    fn layers(&self) -> Vec<&Layer> {
        let mut out: Vec<&Layer> = self.projections.iter().collect();
        out.extend(self.trunk.layers());
        out.push(&self.value_head);
        out.push(&self.action_head);
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        let mut out: Vec<&mut Layer> = self.projections.iter_mut().collect();
        out.extend(self.trunk.layers_mut());
        out.push(&mut self.value_head);
        out.push(&mut self.action_head);
        out
    }
}
