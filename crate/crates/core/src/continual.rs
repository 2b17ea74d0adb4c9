//! Continual training driver.
//!
//! Tasks arrive one at a time. At stage `i` the model sees the graph induced
//! by tasks `1..=i`, trains a fresh head for task `i` on a warm-started
//! backbone, optionally replays earlier buffer vertices (reweighted by kernel
//! mean matching), then records accuracies for every task seen so far.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::alignment::{kmm_weights, AlignmentConfig, BetaWeights};
use crate::error::{Error, Result};
use crate::gnn::{accuracy, embed, head_logits, train, GraphInput, ModelParams, TrainConfig, WeightedSet};
use crate::graph::{Graph, VertexId};
use crate::metrics::PerformanceMatrix;
use crate::rng::{derive_seed, derived_rng};
use crate::selection::{select, ExperienceBuffer, SelectionRequest, Strategy};
use crate::stream::{TaskStream, VertexBatch};

/// Smallest batch that can be split into non-empty train, valid and test sets.
pub const MIN_BATCH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Sequential fine-tuning without any replay.
    Bare,
    /// One model trained on every task at once.
    Joint,
    /// Experience replay with the configured selection strategy.
    #[default]
    Replay,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bare" => Ok(Method::Bare),
            "joint" => Ok(Method::Joint),
            "replay" => Ok(Method::Replay),
            _ => Err(Error::invalid(format!("unknown method `{s}`"))),
        }
    }
}

/// Replay budget per task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Share of the task's training set, rounded down.
    Fraction(f64),
    Absolute(usize),
}

impl Default for Budget {
    fn default() -> Self {
        Budget::Fraction(0.05)
    }
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Budget::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                Err(Error::invalid(format!("budget fraction {f} is outside (0, 1]")))
            }
            Budget::Absolute(0) => Err(Error::invalid("absolute budget must be at least 1")),
            _ => Ok(()),
        }
    }

    /// Budget for a training set of `train_len` vertices spanning `classes`
    /// classes: at least one vertex per class, at most the whole set.
    pub fn resolve(&self, train_len: usize, classes: usize) -> usize {
        let raw = match *self {
            Budget::Fraction(f) => (f * train_len as f64).floor() as usize,
            Budget::Absolute(b) => b,
        };
        raw.max(classes).min(train_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub strategy: Strategy,
    /// Reweight replayed vertices by kernel mean matching.
    pub alignment_enabled: bool,
    pub alignment: AlignmentConfig,
    pub budget: Budget,
    /// Give every class present in a task at least one buffer slot.
    pub stratify: bool,
    /// Train, validation and test shares.
    pub split: [f64; 3],
    pub train: TrainConfig,
    /// Epochs of joint training; `None` means `train.epochs` times the number
    /// of tasks, the optimizer steps a continual run takes.
    pub joint_epochs: Option<usize>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Replay,
            strategy: Strategy::KcenterGreedy,
            alignment_enabled: true,
            alignment: AlignmentConfig::default(),
            budget: Budget::default(),
            stratify: true,
            split: [0.6, 0.2, 0.2],
            train: TrainConfig::default(),
            joint_epochs: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.budget.validate()?;
        self.alignment.validate()?;
        let [tr, va, te] = self.split;
        if [tr, va, te].iter().any(|r| !(*r >= 0.0 && r.is_finite())) || tr == 0.0 || te == 0.0 {
            return Err(Error::invalid("split shares must be non-negative with positive train and test"));
        }
        if self.joint_epochs == Some(0) {
            return Err(Error::invalid("joint_epochs must be at least 1"));
        }
        if (tr + va + te - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split shares sum to {}, expected 1", tr + va + te)));
        }
        Ok(())
    }

    /// True when β is computed, i.e. replay with alignment on.
    pub fn uses_alignment(&self) -> bool {
        self.method == Method::Replay && self.alignment_enabled
    }

    /// Epochs of joint training on a stream of `num_tasks` tasks.
    pub fn joint_epochs_for(&self, num_tasks: usize) -> usize {
        self.joint_epochs.unwrap_or(self.train.epochs * num_tasks)
    }
}

/// Disjoint train / validation / test vertex sets of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub train: Vec<VertexId>,
    pub valid: Vec<VertexId>,
    pub test: Vec<VertexId>,
}

/// Largest-remainder rounding of `ratios * n`; ties favour earlier shares.
fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        counts[k] += 1;
    }
    counts
}

/// Random class-stratified split with sizes from largest-remainder rounding.
///
/// Each class is shuffled, and the classes are merged into one sequence in
/// which every class is spread evenly (by relative rank within its class).
/// Consecutive runs of that sequence become train, validation and test, so
/// each split carries its proportional share of every class to within one.
pub fn split_task(batch: &VertexBatch, ratios: [f64; 3], seed: u64) -> Result<TaskSplit> {
    if batch.len() < MIN_BATCH {
        return Err(Error::invalid(format!(
            "a batch of {} vertices is too small to split (minimum {MIN_BATCH})",
            batch.len()
        )));
    }
    let mut by_class: std::collections::BTreeMap<usize, Vec<VertexId>> = Default::default();
    for (&v, &y) in batch.vertex_ids.iter().zip(&batch.labels) {
        by_class.entry(y).or_default().push(v);
    }
    let mut rng = derived_rng(seed, "split", 0);
    let mut keyed: Vec<(f64, usize, VertexId)> = Vec::with_capacity(batch.len());
    for (&class, members) in by_class.iter_mut() {
        members.sort_unstable();
        members.shuffle(&mut rng);
        let len = members.len() as f64;
        keyed.extend(members.iter().enumerate().map(|(r, &v)| ((r as f64 + 0.5) / len, class, v)));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let sizes = apportion(batch.len(), &ratios);
    let mut it = keyed.into_iter().map(|k| k.2);
    let mut take = |n: usize| {
        let mut part: Vec<VertexId> = it.by_ref().take(n).collect();
        part.sort_unstable();
        part
    };
    let train = take(sizes[0]);
    let valid = take(sizes[1]);
    let test = take(sizes[2]);
    Ok(TaskSplit { train, valid, test })
}

/// Replay weights used for one stage, keyed by buffer vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageWeights {
    pub stage: usize,
    pub vertices: Vec<VertexId>,
    pub weights: BetaWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: usize,
    pub final_loss: f64,
    /// Validation accuracy per task seen so far.
    pub valid_accuracy: Vec<f64>,
    pub budget: Option<usize>,
    pub seconds: f64,
}

/// Everything a run produces besides the performance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub splits: Vec<TaskSplit>,
    pub buffer: Option<ExperienceBuffer>,
    pub betas: Vec<StageWeights>,
    pub stages: Vec<StageLog>,
    #[serde(skip)]
    pub final_params: Option<ModelParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub matrix: PerformanceMatrix,
    pub artifacts: RunArtifacts,
}

/// Per-component seeds derived from the experiment seed.
mod seeds {
    pub const INIT: &str = "model/init";
    pub const HEAD: &str = "model/head";
    pub const SPLIT: &str = "split";
    pub const SELECT: &str = "selection";
}

/// Every derived seed a run of `num_tasks` tasks draws from, as
/// `(label/index, seed)` pairs in a fixed order.
pub fn resolved_seeds(cfg: &ExperimentConfig, num_tasks: usize) -> Vec<(String, u64)> {
    let mut out = vec![
        ("root".to_string(), cfg.seed),
        (format!("{}/0", seeds::INIT), derive_seed(cfg.seed, seeds::INIT, 0)),
    ];
    for label in [seeds::SPLIT, seeds::HEAD, seeds::SELECT] {
        for i in 1..=num_tasks as u64 {
            out.push((format!("{label}/{i}"), derive_seed(cfg.seed, label, i)));
        }
    }
    out
}

fn labels_of(stream: &TaskStream, vertices: &[VertexId]) -> Vec<usize> {
    vertices.iter().map(|&v| stream.label(v).expect("split vertices come from the stream")).collect()
}

fn local_rows(g: &Graph, vertices: &[VertexId]) -> Result<Vec<usize>> {
    vertices.iter().map(|&v| g.require_local(v)).collect()
}

fn graph_input(stream: &TaskStream, upto: usize, cfg: &TrainConfig) -> Result<(Graph, GraphInput)> {
    let g = stream.induce_graph(upto)?;
    let x = stream.features_for(&g)?;
    let input = GraphInput::new(cfg.arch, &g, x)?;
    Ok((g, input))
}

/// Accuracy of head `j` on `sets[j - 1]` for every task, with embeddings
/// computed on `input`'s graph.
pub fn evaluate_row(
    params: &ModelParams,
    input: &GraphInput,
    g: &Graph,
    stream: &TaskStream,
    sets: &[&[VertexId]],
) -> Result<Vec<f64>> {
    let emb = embed(params, input)?;
    sets.iter()
        .enumerate()
        .map(|(j, vertices)| {
            let logits = head_logits(params, j + 1, emb.rows.view())?;
            Ok(accuracy(&logits, &local_rows(g, vertices)?, &labels_of(stream, vertices)))
        })
        .collect()
}

/// The train / validation / test split of every task, as a run with `cfg`
/// draws it.
pub fn all_splits(stream: &TaskStream, cfg: &ExperimentConfig) -> Result<Vec<TaskSplit>> {
    stream
        .batches()
        .iter()
        .enumerate()
        .map(|(i, b)| split_task(b, cfg.split, derive_seed(cfg.seed, seeds::SPLIT, i as u64 + 1)))
        .collect()
}

fn fresh_model(stream: &TaskStream, cfg: &ExperimentConfig) -> ModelParams {
    ModelParams::init(
        cfg.train.arch,
        stream.feature_dim(),
        cfg.train.hidden_dim,
        cfg.train.last_activation,
        derive_seed(cfg.seed, seeds::INIT, 0),
    )
}

fn num_classes(labels: &[usize]) -> usize {
    labels.iter().collect::<std::collections::BTreeSet<_>>().len()
}

/// Dispatches on the configured method.
pub fn run(stream: &TaskStream, cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.method {
        Method::Joint => run_joint(stream, cfg),
        Method::Bare | Method::Replay => run_continual(stream, cfg),
    }
}

/// Trains tasks in order and fills the lower-triangular performance matrix.
pub fn run_continual(stream: &TaskStream, cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.method == Method::Joint {
        return Err(Error::invalid("joint training is not a continual method"));
    }
    let replay = cfg.method == Method::Replay;
    let splits = all_splits(stream, cfg)?;
    let mut params = fresh_model(stream, cfg);
    let mut buffer = replay.then(|| ExperienceBuffer::new(cfg.strategy, cfg.seed));
    let mut betas = Vec::new();
    let mut stages = Vec::new();
    let mut rows = Vec::new();
    let mut previous: Option<(GraphInput, ModelParams)> = None;

    for i in 1..=stream.num_tasks() {
        let started = Instant::now();
        let (g, input) = graph_input(stream, i, &cfg.train)?;
        let split = &splits[i - 1];

        let mut sets = vec![WeightedSet::uniform(i, local_rows(&g, &split.train)?, labels_of(stream, &split.train))];
        if let Some(buf) = &buffer {
            let replayed: Vec<VertexId> = buf.entries().iter().flat_map(|e| e.vertices.iter().copied()).collect();
            let beta = match &previous {
                Some((old_input, checkpoint)) if cfg.alignment_enabled && !replayed.is_empty() => {
                    let w = kmm_weights(checkpoint, old_input, &input, &replayed, &cfg.alignment)?;
                    if !w.converged {
                        log::warn!("stage {i}: KMM stopped at residual {:e} after {} iterations", w.residual, w.iterations);
                    }
                    let beta = w.beta.clone();
                    betas.push(StageWeights { stage: i, vertices: replayed.clone(), weights: w });
                    beta
                }
                _ => vec![1.0; replayed.len()],
            };
            let mut offset = 0;
            for e in buf.entries() {
                let n = e.vertices.len();
                sets.push(WeightedSet::weighted(
                    e.task,
                    local_rows(&g, &e.vertices)?,
                    labels_of(stream, &e.vertices),
                    beta[offset..offset + n].to_vec(),
                ));
                offset += n;
            }
        }

        params.add_head(stream.num_classes(), derive_seed(cfg.seed, seeds::HEAD, i as u64));
        let losses = train(&mut params, &input, &sets, cfg.train.epochs, &cfg.train.adam())?;

        let mut budget = None;
        if let Some(buf) = &mut buffer {
            let labels = labels_of(stream, &split.train);
            let b = cfg.budget.resolve(split.train.len(), num_classes(&labels));
            let emb = (cfg.strategy.needs_embeddings()).then(|| embed(&params, &input)).transpose()?;
            let chosen = select(
                cfg.strategy,
                &SelectionRequest {
                    graph: &g,
                    candidates: &split.train,
                    labels: &labels,
                    budget: b,
                    seed: derive_seed(cfg.seed, seeds::SELECT, i as u64),
                    stratify: cfg.stratify,
                    embeddings: emb.as_ref(),
                },
            )?;
            buf.push(i, b, chosen)?;
            budget = Some(b);
        }

        let tests: Vec<&[VertexId]> = splits[..i].iter().map(|s| s.test.as_slice()).collect();
        rows.push(evaluate_row(&params, &input, &g, stream, &tests)?);
        let valids: Vec<&[VertexId]> = splits[..i].iter().map(|s| s.valid.as_slice()).collect();
        let valid_accuracy = if valids.iter().all(|v| !v.is_empty()) {
            evaluate_row(&params, &input, &g, stream, &valids)?
        } else {
            Vec::new()
        };
        stages.push(StageLog {
            stage: i,
            final_loss: *losses.last().expect("at least one epoch"),
            valid_accuracy,
            budget,
            seconds: started.elapsed().as_secs_f64(),
        });
        previous = Some((input, params.clone()));
    }

    Ok(RunOutput {
        matrix: PerformanceMatrix::triangular(rows)?,
        artifacts: RunArtifacts { splits, buffer, betas, stages, final_params: Some(params) },
    })
}

/// Trains one model on every task's training split over the full graph,
/// each task through its own head, and records the final row only.
pub fn run_joint(stream: &TaskStream, cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let m = stream.num_tasks();
    let splits = all_splits(stream, cfg)?;
    let (g, input) = graph_input(stream, m, &cfg.train)?;
    let mut params = fresh_model(stream, cfg);
    let total: usize = splits.iter().map(|s| s.train.len()).sum();
    let mut sets = Vec::with_capacity(m);
    for (j, split) in splits.iter().enumerate() {
        params.add_head(stream.num_classes(), derive_seed(cfg.seed, seeds::HEAD, j as u64 + 1));
        let mut set = WeightedSet::uniform(j + 1, local_rows(&g, &split.train)?, labels_of(stream, &split.train));
        set.scale = 1.0 / total as f64;
        sets.push(set);
    }
    let losses = train(&mut params, &input, &sets, cfg.joint_epochs_for(m), &cfg.train.adam())?;
    let tests: Vec<&[VertexId]> = splits.iter().map(|s| s.test.as_slice()).collect();
    let row = evaluate_row(&params, &input, &g, stream, &tests)?;
    let valids: Vec<&[VertexId]> = splits.iter().map(|s| s.valid.as_slice()).collect();
    let valid_accuracy =
        if valids.iter().all(|v| !v.is_empty()) { evaluate_row(&params, &input, &g, stream, &valids)? } else { Vec::new() };
    let stages = vec![StageLog {
        stage: m,
        final_loss: *losses.last().expect("at least one epoch"),
        valid_accuracy,
        budget: None,
        seconds: started.elapsed().as_secs_f64(),
    }];
    Ok(RunOutput {
        matrix: PerformanceMatrix::final_only(row)?,
        artifacts: RunArtifacts { splits, buffer: None, betas: Vec::new(), stages, final_params: Some(params) },
    })
}
