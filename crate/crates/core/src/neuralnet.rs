//! Minimal neural core: embedding tables feeding a dense tower that ends in a
//! single sigmoid unit, trained on mean binary cross-entropy.
//!
//! Backpropagation is written out by hand for exactly this graph shape. All
//! parameters are `f64`. Gradients are stored densely in the same tensor order
//! the network exposes through [`Network::tensors`]:
//! every embedding table, then for each dense layer its weights followed by
//! its bias.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::rng;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-12;

/// Half-width of the uniform embedding initialisation.
pub const EMBEDDING_INIT_SCALE: f64 = 0.05;

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn bce_loss(p: f64, y: bool) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

/// Row-major `rows × dim` lookup table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Result<Self> {
        Self::from_weights(rows, dim, vec![0.0; rows * dim])
    }

    pub fn uniform<R: Rng>(rows: usize, dim: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let weights = (0..rows * dim)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Self::from_weights(rows, dim, weights)
    }

    pub fn from_weights(rows: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || rows == 0 {
            return Err(Error::Shape(format!("embedding table {rows}×{dim}")));
        }
        if weights.len() != rows * dim {
            return Err(Error::Shape(format!(
                "embedding table {rows}×{dim} given {} weights",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Shape(
                "embedding table has non-finite entries".into(),
            ));
        }
        Ok(EmbeddingTable { rows, dim, weights })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, idx: usize) -> Result<&[f64]> {
        if idx >= self.rows {
            return Err(Error::IndexOutOfRange {
                what: "embedding row",
                index: idx,
                size: self.rows,
            });
        }
        Ok(&self.weights[idx * self.dim..(idx + 1) * self.dim])
    }

    pub fn embed(&self, idx: usize) -> Result<Vec<f64>> {
        self.row(idx).map(<[f64]>::to_vec)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `activation(W x + b)` with `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape(format!("dense layer {in_dim}→{out_dim}")));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "dense layer {in_dim}→{out_dim} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::Shape("dense layer has non-finite parameters".into()));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Self::new(in_dim, out_dim, weights, vec![0.0; out_dim], activation)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn preactivation_into(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        z.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b),
        );
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "dense layer expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut z = Vec::with_capacity(self.out_dim);
        self.preactivation_into(x, &mut z);
        Ok(z.into_iter().map(|v| self.activation.apply(v)).collect())
    }
}

/// A batch of examples: `width` embedding indices per example plus a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    width: usize,
    inputs: Vec<usize>,
    labels: Vec<bool>,
}

impl Batch {
    pub fn new(width: usize, inputs: Vec<usize>, labels: Vec<bool>) -> Result<Self> {
        if width == 0 || inputs.len() != width * labels.len() {
            return Err(Error::Shape(format!(
                "batch of {} labels with {} inputs at width {width}",
                labels.len(),
                inputs.len()
            )));
        }
        Ok(Batch {
            width,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn example(&self, i: usize) -> (&[usize], bool) {
        (
            &self.inputs[i * self.width..(i + 1) * self.width],
            self.labels[i],
        )
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

/// Gradients laid out like [`Network::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Vec<f64>>,
    n_embeddings: usize,
}

impl Gradients {
    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn embedding(&self, table: usize) -> &[f64] {
        &self.tensors[table]
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.tensors[self.n_embeddings + 2 * layer]
    }

    pub fn layer_weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.tensors[self.n_embeddings + 2 * layer]
    }

    pub fn layer_bias(&self, layer: usize) -> &[f64] {
        &self.tensors[self.n_embeddings + 2 * layer + 1]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.is_finite())
    }
}

/// Per-example activations cached for the backward pass.
#[derive(Debug, Default)]
struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Output of a combined forward and backward pass.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub loss: f64,
    pub probabilities: Vec<f64>,
    pub gradients: Gradients,
}

/// Embedding tables whose looked-up rows are concatenated and fed through a
/// dense tower ending in one sigmoid unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    embeddings: Vec<EmbeddingTable>,
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(embeddings: Vec<EmbeddingTable>, layers: Vec<DenseLayer>) -> Result<Self> {
        if embeddings.is_empty() || layers.is_empty() {
            return Err(Error::Shape("network needs embeddings and layers".into()));
        }
        let concat: usize = embeddings.iter().map(EmbeddingTable::dim).sum();
        let mut width = concat;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim != width {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but receives {width}",
                    layer.in_dim
                )));
            }
            width = layer.out_dim;
        }
        let last = layers.last().expect("non-empty");
        if last.out_dim != 1 || last.activation != Activation::Sigmoid {
            return Err(Error::Shape(
                "output layer must be a single sigmoid unit".into(),
            ));
        }
        Ok(Network { embeddings, layers })
    }

    /// Uniform embeddings and a Glorot-initialised ReLU tower over `hidden`
    /// widths, followed by the sigmoid output unit.
    pub fn init(vocab_sizes: &[usize], dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = rng(seed);
        let embeddings = vocab_sizes
            .iter()
            .map(|&rows| EmbeddingTable::uniform(rows, dim, EMBEDDING_INIT_SCALE, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = dim * vocab_sizes.len();
        for &h in hidden {
            layers.push(DenseLayer::glorot(width, h, Activation::Relu, &mut rng)?);
            width = h;
        }
        layers.push(DenseLayer::glorot(width, 1, Activation::Sigmoid, &mut rng)?);
        Self::new(embeddings, layers)
    }

    pub fn embeddings(&self) -> &[EmbeddingTable] {
        &self.embeddings
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Parameter tensors in canonical order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self
            .embeddings
            .iter()
            .map(|e| e.weights.as_slice())
            .collect();
        for l in &self.layers {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .embeddings
            .iter_mut()
            .map(|e| e.weights.as_mut_slice())
            .collect();
        for l in &mut self.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|w| w.is_finite()))
    }

    fn check_inputs(&self, inputs: &[usize]) -> Result<()> {
        if inputs.len() != self.embeddings.len() {
            return Err(Error::Shape(format!(
                "network takes {} indices, got {}",
                self.embeddings.len(),
                inputs.len()
            )));
        }
        for (table, &idx) in self.embeddings.iter().zip(inputs) {
            table.row(idx)?;
        }
        Ok(())
    }

    fn trace(&self, inputs: &[usize], trace: &mut Trace) {
        trace.input.clear();
        for (table, &idx) in self.embeddings.iter().zip(inputs) {
            trace
                .input
                .extend_from_slice(&table.weights[idx * table.dim..(idx + 1) * table.dim]);
        }
        trace.pre.resize_with(self.layers.len(), Vec::new);
        trace.post.resize_with(self.layers.len(), Vec::new);
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = trace.post.split_at_mut(l);
            let x = if l == 0 { &trace.input } else { &before[l - 1] };
            layer.preactivation_into(x, &mut trace.pre[l]);
            let out = &mut after[0];
            out.clear();
            out.extend(trace.pre[l].iter().map(|&z| layer.activation.apply(z)));
        }
    }

    /// Probability for one example.
    pub fn predict(&self, inputs: &[usize]) -> Result<f64> {
        self.check_inputs(inputs)?;
        let mut trace = Trace::default();
        self.trace(inputs, &mut trace);
        Ok(trace.post.last().expect("layers")[0])
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.width != self.embeddings.len() {
            return Err(Error::Shape(format!(
                "batch width {} for a network with {} embedding tables",
                batch.width,
                self.embeddings.len()
            )));
        }
        for i in 0..batch.len() {
            self.check_inputs(batch.example(i).0)?;
        }
        Ok(())
    }

    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let mut trace = Trace::default();
        Ok((0..batch.len())
            .map(|i| {
                self.trace(batch.example(i).0, &mut trace);
                trace.post.last().expect("layers")[0]
            })
            .collect())
    }

    /// Mean binary cross-entropy over the batch.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("neuralnet: loss"));
        }
        let probs = self.predict_batch(batch)?;
        let total: f64 = probs
            .iter()
            .zip(batch.labels())
            .map(|(&p, &y)| bce_loss(p, y))
            .sum();
        Ok(total / batch.len() as f64)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            n_embeddings: self.embeddings.len(),
        }
    }

    /// Forward and backward pass for the mean BCE of `batch`.
    ///
    /// The output delta is `p - y`, the derivative of the unclamped loss with
    /// respect to the output logit. It agrees with the clamped loss wherever
    /// `p` lies strictly inside the clamp interval.
    pub fn forward_backward(&self, batch: &Batch) -> Result<BatchOutput> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("neuralnet: backward"));
        }
        self.check_batch(batch)?;
        let n_emb = self.embeddings.len();
        let n_layers = self.layers.len();
        let scale = 1.0 / batch.len() as f64;
        let mut grads = self.zero_gradients();
        let mut trace = Trace::default();
        let mut probabilities = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        let mut delta: Vec<f64> = Vec::new();
        let mut upstream: Vec<f64> = Vec::new();

        for i in 0..batch.len() {
            let (inputs, y) = batch.example(i);
            self.trace(inputs, &mut trace);
            let p = trace.post[n_layers - 1][0];
            probabilities.push(p);
            loss += bce_loss(p, y);

            delta.clear();
            delta.push((p - if y { 1.0 } else { 0.0 }) * scale);
            for l in (0..n_layers).rev() {
                let layer = &self.layers[l];
                let x = if l == 0 {
                    &trace.input
                } else {
                    &trace.post[l - 1]
                };
                let (gw_idx, gb_idx) = (n_emb + 2 * l, n_emb + 2 * l + 1);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    grads.tensors[gb_idx][o] += d;
                    let row = &mut grads.tensors[gw_idx][o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, &xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
                // dL/dx for this layer's input.
                upstream.clear();
                upstream.resize(layer.in_dim, 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (u, &w) in upstream.iter_mut().zip(row) {
                        *u += d * w;
                    }
                }
                if l > 0 {
                    let below = &self.layers[l - 1];
                    delta.clear();
                    delta.extend(
                        upstream
                            .iter()
                            .zip(&trace.pre[l - 1])
                            .zip(&trace.post[l - 1])
                            .map(|((&u, &z), &a)| u * below.activation.derivative(z, a)),
                    );
                }
            }
            // `upstream` now holds dL/d(concatenated embeddings).
            let mut offset = 0;
            for (t, (table, &idx)) in self.embeddings.iter().zip(inputs).enumerate() {
                let g = &mut grads.tensors[t][idx * table.dim..(idx + 1) * table.dim];
                for (gi, &u) in g.iter_mut().zip(&upstream[offset..offset + table.dim]) {
                    *gi += u;
                }
                offset += table.dim;
            }
        }
        Ok(BatchOutput {
            loss: loss * scale,
            probabilities,
            gradients: grads,
        })
    }

    pub fn backward(&self, batch: &Batch) -> Result<Gradients> {
        Ok(self.forward_backward(batch)?.gradients)
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_network(config: AdamConfig, net: &Network) -> Self {
        let shapes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        Self::new(config, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over every tensor.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, given {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != self.first[i].len() {
                return Err(Error::Shape(format!("tensor {i} changed shape")));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                if m[j] == 0.0 {
                    continue;
                }
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        self.step(net.tensors_mut(), grads.tensors())
    }
}

/// Coordinate of one scalar parameter: (tensor, offset).
pub type Coordinate = (usize, usize);

/// Coordinates the batch can influence: every dense parameter plus the
/// embedding rows it looks up. Other embedding rows have zero gradient on
/// both sides of the comparison and would only dilute the check.
fn active_coordinates(net: &Network, batch: &Batch) -> Vec<Vec<usize>> {
    let tensors = net.tensors();
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(tensors.len());
    for (t, table) in net.embeddings.iter().enumerate() {
        let rows: BTreeSet<usize> = (0..batch.len()).map(|i| batch.example(i).0[t]).collect();
        out.push(
            rows.into_iter()
                .flat_map(|r| r * table.dim..(r + 1) * table.dim)
                .collect(),
        );
    }
    for t in &tensors[net.embeddings.len()..] {
        out.push((0..t.len()).collect());
    }
    out
}

/// Samples at least `min_coords` active coordinates spread across every
/// tensor so that each parameter group is exercised.
pub fn sample_coordinates(
    net: &Network,
    batch: &Batch,
    min_coords: usize,
    seed: u64,
) -> Vec<Coordinate> {
    let active = active_coordinates(net, batch);
    let per_tensor = min_coords.div_ceil(active.len()).max(8);
    let mut rng = rng(seed);
    let mut coords = Vec::new();
    for (t, offsets) in active.iter().enumerate() {
        let take = per_tensor.min(offsets.len());
        for i in index::sample(&mut rng, offsets.len(), take) {
            coords.push((t, offsets[i]));
        }
    }
    coords
}

/// Outcome of comparing analytic gradients with finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose ±h probes moved a ReLU unit across zero. The loss is
    /// not differentiable there, so the central difference is meaningless.
    pub skipped_kinks: usize,
}

/// Signs of every ReLU pre-activation over the batch.
fn relu_pattern(net: &Network, batch: &Batch) -> Vec<bool> {
    let mut trace = Trace::default();
    let mut signs = Vec::new();
    for i in 0..batch.len() {
        net.trace(batch.example(i).0, &mut trace);
        for (layer, pre) in net.layers.iter().zip(&trace.pre) {
            if layer.activation == Activation::Relu {
                signs.extend(pre.iter().map(|&z| z > 0.0));
            }
        }
    }
    signs
}

/// Compares `analytic` with central finite differences of the batch loss at
/// step `h` over the given coordinates, skipping ReLU kinks.
pub fn check_gradients(
    net: &Network,
    batch: &Batch,
    analytic: &Gradients,
    h: f64,
    coords: &[Coordinate],
) -> Result<GradientCheck> {
    net.check_batch(batch)?;
    let base = relu_pattern(net, batch);
    let mut probe = net.clone();
    let mut report = GradientCheck {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for &(t, j) in coords {
        let original = probe.tensors()[t][j];
        probe.tensors_mut()[t][j] = original + h;
        let plus = probe.loss(batch)?;
        let crossed_plus = relu_pattern(&probe, batch) != base;
        probe.tensors_mut()[t][j] = original - h;
        let minus = probe.loss(batch)?;
        let crossed_minus = relu_pattern(&probe, batch) != base;
        probe.tensors_mut()[t][j] = original;
        if crossed_plus || crossed_minus {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.tensors[t][j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

pub fn max_relative_error(
    net: &Network,
    batch: &Batch,
    analytic: &Gradients,
    h: f64,
    coords: &[Coordinate],
) -> Result<f64> {
    Ok(check_gradients(net, batch, analytic, h, coords)?.max_relative_error)
}

/// Backpropagates `batch` and compares against finite differences over a
/// sample of at least 100 active coordinates, so that 50 or more survive
/// kink skipping on typical networks.
pub fn gradient_check(net: &Network, batch: &Batch, h: f64, seed: u64) -> Result<GradientCheck> {
    let analytic = net.backward(batch)?;
    let coords = sample_coordinates(net, batch, 100, seed);
    check_gradients(net, batch, &analytic, h, &coords)
}
