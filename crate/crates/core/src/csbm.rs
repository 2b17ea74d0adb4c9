//! Contextual stochastic block model streams.
//!
//! Each learning stage is a two-community SBM of `n_per_stage` vertices whose
//! community sizes are skewed by `delta` in alternating directions, so the
//! class balance flips from one stage to the next. Consecutive stages are
//! joined by uniformly random cross-stage edges. Features follow
//! `x_v = sqrt(mu / n) * y_v * u + Z_v / p` with a single shared spike `u`.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_rng;
use crate::stream::{TaggedEdge, TaskStream, VertexBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrossStageEdges {
    /// Only stages `s` and `s + 1` are joined.
    #[default]
    Consecutive,
    /// Every pair of distinct stages is joined.
    AllPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsbmConfig {
    pub n_per_stage: usize,
    pub p_dim: usize,
    pub mu: f64,
    pub p_intra: f64,
    pub p_inter: f64,
    pub p_stage: f64,
    pub delta: usize,
    pub num_stages: usize,
    pub seed: u64,
    /// Map community labels to ±1 in the feature formula instead of {0, 1}.
    pub symmetric_labels: bool,
    pub cross_stage: CrossStageEdges,
}

impl Default for CsbmConfig {
    fn default() -> Self {
        CsbmConfig {
            n_per_stage: 300,
            p_dim: 500,
            mu: 5.0,
            p_intra: 0.15,
            p_inter: 0.1,
            p_stage: 0.1,
            delta: 0,
            num_stages: 2,
            seed: 0,
            symmetric_labels: false,
            cross_stage: CrossStageEdges::Consecutive,
        }
    }
}

impl CsbmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
            ("p_stage", self.p_stage),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is not a probability")));
            }
        }
        if self.n_per_stage < 2 || !self.n_per_stage.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "n_per_stage must be even and at least 2, got {}",
                self.n_per_stage
            )));
        }
        if self.delta > self.n_per_stage / 2 {
            return Err(Error::invalid(format!(
                "delta = {} exceeds n_per_stage / 2 = {}",
                self.delta,
                self.n_per_stage / 2
            )));
        }
        if self.p_dim == 0 {
            return Err(Error::invalid("p_dim must be positive"));
        }
        if self.num_stages == 0 {
            return Err(Error::invalid("num_stages must be positive"));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::invalid(format!("mu must be finite and non-negative, got {}", self.mu)));
        }
        Ok(())
    }

    /// Community sizes `(c0, c1)` of a 1-based stage. Odd stages lean towards
    /// community 0, even stages towards community 1.
    pub fn stage_counts(&self, stage: usize) -> Result<(usize, usize)> {
        if self.delta > self.n_per_stage / 2 {
            return Err(Error::invalid(format!(
                "delta = {} exceeds n_per_stage / 2",
                self.delta
            )));
        }
        if stage == 0 || stage > self.num_stages {
            return Err(Error::invalid(format!("stage {stage} outside 1..={}", self.num_stages)));
        }
        let half = self.n_per_stage / 2;
        Ok(if stage % 2 == 1 {
            (half + self.delta, half - self.delta)
        } else {
            (half - self.delta, half + self.delta)
        })
    }
}

/// The two-stage four-tuple `(c0 at stage 1, c1 at stage 1, c0 at stage 2, c1 at stage 2)`.
pub fn community_counts(cfg: &CsbmConfig) -> Result<(usize, usize, usize, usize)> {
    if cfg.num_stages != 2 {
        return Err(Error::invalid(
            "the four-tuple form is defined for two stages; use CsbmConfig::stage_counts",
        ));
    }
    let (a, b) = cfg.stage_counts(1)?;
    let (c, d) = cfg.stage_counts(2)?;
    Ok((a, b, c, d))
}

/// A generated stream together with its shared feature spike `u`.
#[derive(Debug, Clone)]
pub struct CsbmSample {
    pub stream: TaskStream,
    pub signal: Array1<f64>,
}

pub fn generate_stream(cfg: &CsbmConfig) -> Result<TaskStream> {
    generate(cfg).map(|s| s.stream)
}

pub fn generate(cfg: &CsbmConfig) -> Result<CsbmSample> {
    cfg.validate()?;
    let n = cfg.n_per_stage;
    let p = cfg.p_dim;

    let mut feat_rng = derived_rng(cfg.seed, "csbm/features", 0);
    let signal: Array1<f64> = Array1::from_shape_fn(p, |_| feat_rng.sample(StandardNormal));
    let scale = (cfg.mu / n as f64).sqrt();

    let mut batches = Vec::with_capacity(cfg.num_stages);
    for stage in 1..=cfg.num_stages {
        let (c0, c1) = cfg.stage_counts(stage)?;
        let mut labels: Vec<usize> = std::iter::repeat_n(0, c0).chain(std::iter::repeat_n(1, c1)).collect();
        labels.shuffle(&mut derived_rng(cfg.seed, "csbm/labels", stage as u64));

        let mut features = Array2::<f64>::zeros((n, p));
        for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
            let y = match (cfg.symmetric_labels, y) {
                (false, y) => y as f64,
                (true, 0) => -1.0,
                (true, _) => 1.0,
            };
            for (x, &u) in row.iter_mut().zip(signal.iter()) {
                let z: f64 = feat_rng.sample(StandardNormal);
                *x = scale * y * u + z / p as f64;
            }
        }
        let first = (stage - 1) * n;
        batches.push(VertexBatch {
            vertex_ids: (first..first + n).collect(),
            features,
            labels,
        });
    }

    let mut edges = Vec::new();
    for stage in 1..=cfg.num_stages {
        let mut rng = derived_rng(cfg.seed, "csbm/intra", stage as u64);
        let b = &batches[stage - 1];
        for i in 0..n {
            for j in i + 1..n {
                let prob = if b.labels[i] == b.labels[j] { cfg.p_intra } else { cfg.p_inter };
                if rng.random::<f64>() < prob {
                    edges.push(TaggedEdge { u: b.vertex_ids[i], v: b.vertex_ids[j], task: stage });
                }
            }
        }
    }
    for later in 2..=cfg.num_stages {
        let earlier: Vec<usize> = match cfg.cross_stage {
            CrossStageEdges::Consecutive => vec![later - 1],
            CrossStageEdges::AllPairs => (1..later).collect(),
        };
        for s in earlier {
            let mut rng = derived_rng(cfg.seed, "csbm/cross", (s * cfg.num_stages + later) as u64);
            for &u in &batches[s - 1].vertex_ids {
                for &v in &batches[later - 1].vertex_ids {
                    if rng.random::<f64>() < cfg.p_stage {
                        edges.push(TaggedEdge { u, v, task: later });
                    }
                }
            }
        }
    }
    edges.sort_unstable();

    let stream = TaskStream::new(p, 2, batches, edges)?;
    Ok(CsbmSample { stream, signal })
}
