//! Two-layer message-passing backbone (GCN or mean-aggregator GraphSAGE)
//! with per-task linear readout heads, hand-derived gradients and Adam.
//!
//! Layer 1 uses ReLU; layer 2 uses a configurable activation (sigmoid by
//! default). The layer-2 output is the vertex embedding.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rand_distr::{Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    Gcn,
    Sage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Square sparse operator in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOp {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseOp {
    pub fn dim(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `S · x`
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.dim(), x.ncols()));
        Zip::indexed(out.rows_mut()).for_each(|i, mut row| {
            for k in self.offsets[i]..self.offsets[i + 1] {
                row.scaled_add(self.vals[k], &x.row(self.cols[k] as usize));
            }
        });
        out
    }

    /// `Sᵀ · x`
    pub fn apply_transpose(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.dim(), x.ncols()));
        for i in 0..self.dim() {
            let xi = x.row(i);
            for k in self.offsets[i]..self.offsets[i + 1] {
                out.row_mut(self.cols[k] as usize).scaled_add(self.vals[k], &xi);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.dim(), self.dim()));
        for i in 0..self.dim() {
            for k in self.offsets[i]..self.offsets[i + 1] {
                d[[i, self.cols[k] as usize]] += self.vals[k];
            }
        }
        d
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` over `g`'s local order.
pub fn normalize_adjacency(g: &Graph) -> SparseOp {
    let n = g.num_vertices();
    let deg: Vec<f64> = (0..n).map(|i| (g.degree_local(i) + 1) as f64).collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    offsets.push(0);
    for i in 0..n {
        let nb = g.neighbors_local(i);
        let split = nb.partition_point(|&u| (u as usize) < i);
        let row = nb[..split].iter().copied().chain(std::iter::once(i as u32)).chain(nb[split..].iter().copied());
        for j in row {
            cols.push(j);
            vals.push(1.0 / (deg[i] * deg[j as usize]).sqrt());
        }
        offsets.push(cols.len());
    }
    SparseOp { offsets, cols, vals }
}

/// Row-normalized neighbor averaging; isolated vertices get an all-zero row.
pub fn mean_aggregator(g: &Graph) -> SparseOp {
    let n = g.num_vertices();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    offsets.push(0);
    for i in 0..n {
        let nb = g.neighbors_local(i);
        let w = 1.0 / nb.len().max(1) as f64;
        cols.extend_from_slice(nb);
        vals.extend(std::iter::repeat_n(w, nb.len()));
        offsets.push(cols.len());
    }
    SparseOp { offsets, cols, vals }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphLayer {
    /// Applied to the GCN-propagated input, or to the vertex's own row for SAGE.
    pub weight: Array2<f64>,
    /// SAGE only: applied to the neighbor mean.
    pub neigh_weight: Option<Array2<f64>>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub last_activation: Activation,
    pub layer1: GraphLayer,
    pub layer2: GraphLayer,
    /// One readout per task; `heads[t - 1]` serves 1-based task `t`.
    pub heads: Vec<Head>,
}

fn glorot(rng: &mut crate::rng::Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("valid bounds");
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(dist))
}

impl ModelParams {
    /// Glorot-uniform layer weights, zero biases, no heads.
    pub fn init(arch: Arch, feature_dim: usize, hidden_dim: usize, last_activation: Activation, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut layer = |fan_in: usize| GraphLayer {
            weight: glorot(&mut rng, fan_in, hidden_dim),
            neigh_weight: (arch == Arch::Sage).then(|| glorot(&mut rng, fan_in, hidden_dim)),
            bias: Array1::zeros(hidden_dim),
        };
        let layer1 = layer(feature_dim);
        let layer2 = layer(hidden_dim);
        ModelParams {
            arch,
            feature_dim,
            hidden_dim,
            last_activation,
            layer1,
            layer2,
            heads: Vec::new(),
        }
    }

    /// Append a readout head drawn from N(0, 0.01²); returns its 1-based task index.
    pub fn add_head(&mut self, classes: usize, seed: u64) -> usize {
        let mut rng = rng_from(seed);
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        self.heads.push(Head {
            weight: Array2::from_shape_simple_fn((self.hidden_dim, classes), || rng.sample(normal)),
            bias: Array1::zeros(classes),
        });
        self.heads.len()
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn head(&self, task: usize) -> Result<&Head> {
        task.checked_sub(1)
            .and_then(|i| self.heads.get(i))
            .ok_or_else(|| Error::invalid(format!("no readout head for task {task}")))
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, data) in z.tensors_mut() {
            data.fill(0.0);
        }
        z
    }

    /// Named tensors in a fixed order, with shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (prefix, layer) in [("layer1", &self.layer1), ("layer2", &self.layer2)] {
            out.push((format!("{prefix}.weight"), layer.weight.shape().to_vec(), slice(&layer.weight)));
            if let Some(w) = &layer.neigh_weight {
                out.push((format!("{prefix}.neigh_weight"), w.shape().to_vec(), slice(w)));
            }
            out.push((format!("{prefix}.bias"), layer.bias.shape().to_vec(), layer.bias.as_slice().unwrap()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("head{}.weight", i + 1), h.weight.shape().to_vec(), slice(&h.weight)));
            out.push((format!("head{}.bias", i + 1), h.bias.shape().to_vec(), h.bias.as_slice().unwrap()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (prefix, layer) in [("layer1", &mut self.layer1), ("layer2", &mut self.layer2)] {
            out.push((format!("{prefix}.weight"), layer.weight.as_slice_mut().unwrap()));
            if let Some(w) = &mut layer.neigh_weight {
                out.push((format!("{prefix}.neigh_weight"), w.as_slice_mut().unwrap()));
            }
            out.push((format!("{prefix}.bias"), layer.bias.as_slice_mut().unwrap()));
        }
        for (i, h) in self.heads.iter_mut().enumerate() {
            out.push((format!("head{}.weight", i + 1), h.weight.as_slice_mut().unwrap()));
            out.push((format!("head{}.bias", i + 1), h.bias.as_slice_mut().unwrap()));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|x| x.is_finite()))
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

/// Vertex embeddings (layer-2 outputs), rows in the source graph's local order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<VertexId>,
    pub rows: Array2<f64>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Row of a global vertex id.
    pub fn get(&self, v: VertexId) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.ids.binary_search(&v).ok().map(|i| self.rows.row(i))
    }

    /// Rows for the given vertices, in the given order.
    pub fn select(&self, vertices: &[VertexId]) -> Result<Array2<f64>> {
        let idx = vertices
            .iter()
            .map(|&v| {
                self.ids
                    .binary_search(&v)
                    .map_err(|_| Error::invalid(format!("no embedding for vertex {v}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.rows.select(Axis(0), &idx))
    }
}

/// Graph-dependent inputs that stay fixed across epochs: the propagation
/// operator and its product with the feature matrix.
#[derive(Debug, Clone)]
pub struct GraphInput {
    arch: Arch,
    ids: Vec<VertexId>,
    op: SparseOp,
    features: Array2<f64>,
    propagated: Array2<f64>,
}

impl GraphInput {
    pub fn new(arch: Arch, g: &Graph, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != g.num_vertices() {
            return Err(Error::invalid(format!(
                "{} feature rows for {} vertices",
                features.nrows(),
                g.num_vertices()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::computation("non-finite input features"));
        }
        let op = match arch {
            Arch::Gcn => normalize_adjacency(g),
            Arch::Sage => mean_aggregator(g),
        };
        let propagated = op.apply(features.view());
        Ok(GraphInput {
            arch,
            ids: g.ids().to_vec(),
            op,
            features,
            propagated,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[VertexId] {
        &self.ids
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        if params.arch != self.arch {
            return Err(Error::invalid("model and graph input use different architectures"));
        }
        if params.feature_dim != self.features.ncols() {
            return Err(Error::invalid(format!(
                "model expects {} features, input has {}",
                params.feature_dim,
                self.features.ncols()
            )));
        }
        Ok(())
    }
}

struct Activations {
    z1: Array2<f64>,
    h1: Array2<f64>,
    /// `op · h1`
    h1_prop: Array2<f64>,
    z2: Array2<f64>,
    emb: Array2<f64>,
}

fn layer_pre(layer: &GraphLayer, arch: Arch, own: &Array2<f64>, propagated: &Array2<f64>) -> Array2<f64> {
    let mut z = match arch {
        Arch::Gcn => propagated.dot(&layer.weight),
        Arch::Sage => {
            let mut z = own.dot(&layer.weight);
            z += &propagated.dot(layer.neigh_weight.as_ref().expect("SAGE layer has neighbor weights"));
            z
        }
    };
    z += &layer.bias;
    z
}

fn backbone(params: &ModelParams, input: &GraphInput) -> Activations {
    let z1 = layer_pre(&params.layer1, params.arch, &input.features, &input.propagated);
    let h1 = z1.mapv(|z| z.max(0.0));
    let h1_prop = input.op.apply(h1.view());
    let z2 = layer_pre(&params.layer2, params.arch, &h1, &h1_prop);
    let act = params.last_activation;
    let emb = z2.mapv(|z| act.apply(z));
    Activations { z1, h1, h1_prop, z2, emb }
}

/// Embeddings for every vertex of a prepared graph input.
pub fn embed(params: &ModelParams, input: &GraphInput) -> Result<EmbeddingTable> {
    input.check(params)?;
    Ok(EmbeddingTable {
        ids: input.ids.clone(),
        rows: backbone(params, input).emb,
    })
}

pub fn embeddings_for(params: &ModelParams, g: &Graph, features: &Array2<f64>) -> Result<EmbeddingTable> {
    embed(params, &GraphInput::new(params.arch, g, features.clone())?)
}

/// Head logits for a block of embedding rows.
pub fn head_logits(params: &ModelParams, task: usize, emb: ArrayView2<f64>) -> Result<Array2<f64>> {
    let head = params.head(task)?;
    if emb.ncols() != head.weight.nrows() {
        return Err(Error::invalid("embedding width does not match the readout head"));
    }
    Ok(emb.dot(&head.weight) + &head.bias)
}

/// Embeddings and task-`task` logits for every vertex of `g`.
pub fn forward(
    params: &ModelParams,
    g: &Graph,
    features: &Array2<f64>,
    task: usize,
) -> Result<(EmbeddingTable, Array2<f64>)> {
    params.head(task)?;
    let table = embeddings_for(params, g, features)?;
    let logits = head_logits(params, task, table.rows.view())?;
    Ok((table, logits))
}

/// Vertices scored by one head with per-vertex weights; the set contributes
/// `scale · Σ_v weight_v · CE(v)` to the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSet {
    /// 1-based task whose head scores these vertices.
    pub task: usize,
    /// Local row indices in the graph input.
    pub rows: Vec<usize>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub scale: f64,
}

impl WeightedSet {
    /// Unit weights, mean-normalized.
    pub fn uniform(task: usize, rows: Vec<usize>, labels: Vec<usize>) -> Self {
        let n = rows.len();
        Self::weighted(task, rows, labels, vec![1.0; n])
    }

    /// Given weights, normalized by the set size.
    pub fn weighted(task: usize, rows: Vec<usize>, labels: Vec<usize>, weights: Vec<f64>) -> Self {
        let scale = if rows.is_empty() { 0.0 } else { 1.0 / rows.len() as f64 };
        WeightedSet {
            task,
            rows,
            labels,
            weights,
            scale,
        }
    }
}

fn log_softmax_row(z: ndarray::ArrayView1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    z.mapv(|x| x - lse)
}

/// Weighted cross-entropy over all sets and its exact gradient.
pub fn weighted_loss_and_grads(
    params: &ModelParams,
    input: &GraphInput,
    sets: &[WeightedSet],
) -> Result<(f64, ModelParams)> {
    input.check(params)?;
    for set in sets {
        params.head(set.task)?;
        if set.rows.len() != set.labels.len() || set.rows.len() != set.weights.len() {
            return Err(Error::invalid("weighted set has mismatched rows/labels/weights"));
        }
        if set.weights.iter().chain(std::iter::once(&set.scale)).any(|w| !w.is_finite()) {
            return Err(Error::computation("non-finite sample weight"));
        }
        if set.weights.iter().any(|&w| w < 0.0) || set.scale < 0.0 {
            return Err(Error::invalid("sample weights must be non-negative"));
        }
        let classes = params.heads[set.task - 1].bias.len();
        if set.labels.iter().any(|&y| y >= classes) {
            return Err(Error::invalid(format!("label outside the {classes} classes of head {}", set.task)));
        }
        if set.rows.iter().any(|&r| r >= input.num_vertices()) {
            return Err(Error::invalid("weighted set row outside the graph"));
        }
    }

    let act = backbone(params, input);
    let mut grads = params.zeros_like();
    let mut d_emb = Array2::<f64>::zeros(act.emb.raw_dim());
    let mut loss = 0.0;

    for set in sets.iter().filter(|s| !s.rows.is_empty()) {
        let head = &params.heads[set.task - 1];
        let emb = act.emb.select(Axis(0), &set.rows);
        let logits = emb.dot(&head.weight) + &head.bias;
        let mut d_logits = Array2::<f64>::zeros(logits.raw_dim());
        for (k, (&y, &w)) in set.labels.iter().zip(&set.weights).enumerate() {
            let logp = log_softmax_row(logits.row(k));
            let coef = set.scale * w;
            loss -= coef * logp[y];
            let mut d = d_logits.row_mut(k);
            d.assign(&logp.mapv(f64::exp));
            d[y] -= 1.0;
            d *= coef;
        }
        let g = &mut grads.heads[set.task - 1];
        g.weight += &emb.t().dot(&d_logits);
        g.bias += &d_logits.sum_axis(Axis(0));
        let d_rows = d_logits.dot(&head.weight.t());
        for (k, &r) in set.rows.iter().enumerate() {
            d_emb.row_mut(r).scaled_add(1.0, &d_rows.row(k));
        }
    }
    if !loss.is_finite() {
        return Err(Error::computation("loss is not finite"));
    }

    let last = params.last_activation;
    let mut d_z2 = d_emb;
    Zip::from(&mut d_z2)
        .and(&act.z2)
        .and(&act.emb)
        .for_each(|d, &z, &a| *d *= last.derivative(z, a));

    let d_h1 = match params.arch {
        Arch::Gcn => {
            grads.layer2.weight = act.h1_prop.t().dot(&d_z2);
            let d_prop = d_z2.dot(&params.layer2.weight.t());
            input.op.apply_transpose(d_prop.view())
        }
        Arch::Sage => {
            let wn = params.layer2.neigh_weight.as_ref().unwrap();
            grads.layer2.weight = act.h1.t().dot(&d_z2);
            grads.layer2.neigh_weight = Some(act.h1_prop.t().dot(&d_z2));
            let mut d_h1 = d_z2.dot(&params.layer2.weight.t());
            d_h1 += &input.op.apply_transpose(d_z2.dot(&wn.t()).view());
            d_h1
        }
    };
    grads.layer2.bias = d_z2.sum_axis(Axis(0));

    let mut d_z1 = d_h1;
    Zip::from(&mut d_z1).and(&act.z1).for_each(|d, &z| {
        if z <= 0.0 {
            *d = 0.0;
        }
    });
    match params.arch {
        Arch::Gcn => grads.layer1.weight = input.propagated.t().dot(&d_z1),
        Arch::Sage => {
            grads.layer1.weight = input.features.t().dot(&d_z1);
            grads.layer1.neigh_weight = Some(input.propagated.t().dot(&d_z1));
        }
    }
    grads.layer1.bias = d_z1.sum_axis(Axis(0));

    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Decoupled (AdamW-style) decay coefficient.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-2,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One Adam update in place. Moments are keyed by tensor name, so heads added
/// between steps start with fresh moments.
pub fn adam_step(state: &mut AdamState, params: &mut ModelParams, grads: &ModelParams, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let grad_tensors: BTreeMap<String, &[f64]> = grads
        .tensors()
        .into_iter()
        .map(|(name, _, data)| (name, data))
        .collect();
    for (name, data) in params.tensors_mut() {
        let Some(&g) = grad_tensors.get(&name) else { continue };
        let (m, v) = state
            .moments
            .entry(name)
            .or_insert_with(|| (vec![0.0; data.len()], vec![0.0; data.len()]));
        adam_update(data, g, m, v, bc1, bc2, cfg);
    }
}

/// Element-wise Adam update with bias corrections `bc1`, `bc2`.
pub(crate) fn adam_update(
    data: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    bc1: f64,
    bc2: f64,
    cfg: &AdamConfig,
) {
    for i in 0..data.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
        data[i] -= cfg.learning_rate * (update + cfg.weight_decay * data[i]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub arch: Arch,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub last_activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Gcn,
            hidden_dim: 64,
            epochs: 200,
            learning_rate: 1e-2,
            weight_decay: 5e-4,
            last_activation: Activation::Sigmoid,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Full-batch training for `epochs` steps; returns the per-epoch losses.
pub fn train(
    params: &mut ModelParams,
    input: &GraphInput,
    sets: &[WeightedSet],
    epochs: usize,
    cfg: &AdamConfig,
) -> Result<Vec<f64>> {
    let mut state = AdamState::default();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, grads) = weighted_loss_and_grads(params, input, sets)?;
        adam_step(&mut state, params, &grads, cfg);
        losses.push(loss);
    }
    if !params.is_finite() {
        return Err(Error::computation("parameters diverged to non-finite values"));
    }
    Ok(losses)
}

const CHECKPOINT_FORMAT: &str = "seaer-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    arch: Arch,
    feature_dim: usize,
    hidden_dim: usize,
    last_activation: Activation,
    tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ModelParams {
    /// Serialize as a flat list of named tensors with shape headers.
    pub fn to_checkpoint_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            arch: self.arch,
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            last_activation: self.last_activation,
            tensors: self
                .tensors()
                .into_iter()
                .map(|(name, shape, data)| TensorRecord { name, shape, data: data.to_vec() })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format {} v{}",
                file.format, file.version
            )));
        }
        let mut by_name: BTreeMap<String, TensorRecord> = BTreeMap::new();
        for t in file.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::invalid(format!("tensor {} data does not match its shape", t.name)));
            }
            let name = t.name.clone();
            if by_name.insert(name.clone(), t).is_some() {
                return Err(Error::invalid(format!("duplicate tensor {name}")));
            }
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::invalid(format!("checkpoint is missing tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::invalid(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            Ok(t.data)
        };
        let (p, h) = (file.feature_dim, file.hidden_dim);
        let sage = file.arch == Arch::Sage;
        let mut layer = |prefix: &str, fan_in: usize| -> Result<GraphLayer> {
            let matrix = |data: Vec<f64>| Array2::from_shape_vec((fan_in, h), data).expect("shape checked");
            let weight = matrix(take(&format!("{prefix}.weight"), &[fan_in, h])?);
            let neigh_weight = if sage {
                Some(matrix(take(&format!("{prefix}.neigh_weight"), &[fan_in, h])?))
            } else {
                None
            };
            let bias = Array1::from(take(&format!("{prefix}.bias"), &[h])?);
            Ok(GraphLayer { weight, neigh_weight, bias })
        };
        let layer1 = layer("layer1", p)?;
        let layer2 = layer("layer2", h)?;
        let mut params = ModelParams {
            arch: file.arch,
            feature_dim: p,
            hidden_dim: h,
            last_activation: file.last_activation,
            layer1,
            layer2,
            heads: Vec::new(),
        };

        let mut task = 1;
        while let Some(w) = by_name.remove(&format!("head{task}.weight")) {
            if w.shape.len() != 2 || w.shape[0] != h {
                return Err(Error::invalid(format!("head{task}.weight has shape {:?}", w.shape)));
            }
            let classes = w.shape[1];
            let weight = Array2::from_shape_vec((h, classes), w.data).expect("shape checked");
            let bias = match by_name.remove(&format!("head{task}.bias")) {
                Some(b) if b.shape == [classes] => Array1::from(b.data),
                _ => return Err(Error::invalid(format!("head{task}.bias is missing or misshapen"))),
            };
            params.heads.push(Head { weight, bias });
            task += 1;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::invalid(format!("unexpected tensor {extra}")));
        }
        Ok(params)
    }
}

/// Fraction of `rows` whose argmax logit equals the label.
pub fn accuracy(logits: &Array2<f64>, rows: &[usize], labels: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let correct = rows
        .iter()
        .zip(labels)
        .filter(|&(&r, &y)| argmax(logits.slice(s![r, ..])) == y)
        .count();
    correct as f64 / rows.len() as f64
}

/// Index of the largest entry; ties resolve to the smallest index.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
