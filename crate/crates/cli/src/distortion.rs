//! `seaer distortion`: hop-distance profile of a stored model's embeddings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seaer_core::continual::{all_splits, ExperimentConfig};
use seaer_core::gnn::{embeddings_for, ModelParams};
use seaer_core::metrics::{distortion_profile, DistortionProfile};
use seaer_core::{TaskStream, VertexId};

use crate::config::read_bytes;
use crate::error::{CliError, CliResult};
use crate::run::write_new;

#[derive(Debug, Clone)]
pub struct DistortionOptions {
    /// Graph of tasks `1..=upto`; the whole stream when `None`.
    pub upto: Option<usize>,
    /// Explicit anchor vertices; otherwise the train split of `anchor_task`.
    pub anchors: Option<Vec<VertexId>>,
    pub anchor_task: usize,
    /// Experiment seed whose split supplies the anchors.
    pub seed: u64,
    pub max_hops: u32,
}

impl Default for DistortionOptions {
    fn default() -> Self {
        DistortionOptions { upto: None, anchors: None, anchor_task: 1, seed: 0, max_hops: 5 }
    }
}

/// Sidecar summary written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSummary {
    pub upto: usize,
    pub anchors: usize,
    pub slope: f64,
    pub alpha: Option<f64>,
    pub degenerate: bool,
}

pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

pub fn cmd_distortion(
    checkpoint: &Path,
    stream_path: &Path,
    out: &Path,
    opts: &DistortionOptions,
) -> CliResult<DistortionProfile> {
    let text = String::from_utf8(read_bytes(checkpoint)?)
        .map_err(|e| CliError::config(format!("{}: {e}", checkpoint.display())))?;
    let params = ModelParams::from_checkpoint_json(&text)
        .map_err(|e| CliError::loading(&checkpoint.display().to_string(), e))?;
    let stream = TaskStream::read_file(stream_path)
        .map_err(|e| CliError::loading(&stream_path.display().to_string(), e))?;
    if params.feature_dim != stream.feature_dim() {
        return Err(CliError::config(format!(
            "checkpoint expects {} features, stream has {}",
            params.feature_dim,
            stream.feature_dim()
        )));
    }
    let upto = opts.upto.unwrap_or(stream.num_tasks());
    if upto == 0 || upto > stream.num_tasks() {
        return Err(CliError::config(format!("--upto {upto} outside 1..={}", stream.num_tasks())));
    }
    let anchors = match &opts.anchors {
        Some(a) => a.clone(),
        None => {
            if opts.anchor_task == 0 || opts.anchor_task > upto {
                return Err(CliError::config(format!("--anchor-task {} outside 1..={upto}", opts.anchor_task)));
            }
            let cfg = ExperimentConfig { seed: opts.seed, ..Default::default() };
            let splits = all_splits(&stream, &cfg).map_err(|e| CliError::config(e.to_string()))?;
            splits[opts.anchor_task - 1].train.clone()
        }
    };
    let g = stream.induce_graph(upto).map_err(|e| CliError::config(e.to_string()))?;
    if let Some(v) = anchors.iter().find(|&&v| g.local(v).is_none()) {
        return Err(CliError::config(format!("anchor vertex {v} is not in the graph of tasks 1..={upto}")));
    }
    let x = stream.features_for(&g).map_err(|e| CliError::runtime(e.to_string()))?;
    let emb = embeddings_for(&params, &g, &x).map_err(|e| CliError::runtime(e.to_string()))?;
    let profile = distortion_profile(&emb, &g, &anchors, opts.max_hops).map_err(|e| CliError::runtime(e.to_string()))?;
    write_new(out, profile.to_csv().as_bytes())?;
    let summary = DistortionSummary {
        upto,
        anchors: anchors.len(),
        slope: profile.slope,
        alpha: profile.alpha,
        degenerate: profile.degenerate,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_new(&summary_path(out), json.as_bytes())?;
    Ok(profile)
}
