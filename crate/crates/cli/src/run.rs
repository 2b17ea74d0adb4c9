//! `seaer run`: one experiment, persisted under an output directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use seaer_core::continual::{resolved_seeds, run, ExperimentConfig};
use seaer_core::metrics::{MetricsReport, PerformanceMatrix};

use crate::config::{base_dir, load_run, LoadedStream};
use crate::error::{CliError, CliResult};
use crate::manifest::{blob_sha256, unix_now, BetaRecord, Manifest, SeedRecord, Status, StreamRecord, Timings, MANIFEST_FILE};
use crate::preset::Preset;

pub const PERFORMANCE_FILE: &str = "performance.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const BETAS_FILE: &str = "betas.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const CHECKPOINT_FILE: &str = "model.json";

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Store the final model parameters.
    pub checkpoint: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { checkpoint: true }
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub label: String,
    #[serde(flatten)]
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    pub matrix: PerformanceMatrix,
    pub metrics: MetricsReport,
}

pub fn cmd_run(config: &Path, out_dir: &Path, opts: RunOptions) -> CliResult<RunSummary> {
    let cfg = load_run(config)?;
    let loaded = cfg.stream.load(&base_dir(config))?;
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    execute(out_dir, "run", echo, &loaded, &cfg.experiment, opts)
}

/// Create `path` and write `bytes`, refusing to replace an existing file.
pub fn write_new(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut f = std::fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

fn prepare_dir(dir: &Path, files: &[&str]) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for f in files {
        let p = dir.join(f);
        if p.exists() {
            return Err(CliError::io(&p, std::io::Error::new(std::io::ErrorKind::AlreadyExists, "refusing to overwrite")));
        }
    }
    Ok(())
}

/// Run `cfg` on a loaded stream and persist every artifact under `out_dir`.
pub fn execute(
    out_dir: &Path,
    command: &str,
    echo: serde_json::Value,
    loaded: &LoadedStream,
    cfg: &ExperimentConfig,
    opts: RunOptions,
) -> CliResult<RunSummary> {
    let mut files = vec![MANIFEST_FILE, PERFORMANCE_FILE, METRICS_FILE, BETAS_FILE, SPLITS_FILE];
    if opts.checkpoint {
        files.push(CHECKPOINT_FILE);
    }
    prepare_dir(out_dir, &files)?;
    let stream = &loaded.stream;
    let label = Preset::label(cfg);
    let mut manifest = Manifest {
        tool: "seaer".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        status: Status::Running,
        error: None,
        label: label.clone(),
        config: echo,
        seeds: resolved_seeds(cfg, stream.num_tasks())
            .into_iter()
            .map(|(name, seed)| SeedRecord { name, seed })
            .collect(),
        stream: StreamRecord {
            source: loaded.source.clone(),
            sha256: blob_sha256(&loaded.bytes),
            num_tasks: stream.num_tasks(),
            num_vertices: stream.num_vertices(),
        },
        artifacts: BTreeMap::new(),
        buffers: Vec::new(),
        betas: Vec::new(),
        timings: Timings { started_unix: unix_now(), finished_unix: None, seconds: None, stages: Vec::new() },
    };
    manifest.write(out_dir)?;

    let out = match run(stream, cfg) {
        Ok(out) => out,
        Err(e) => {
            log::error!("run failed: {e}");
            manifest.finish(Status::Failed, Some(e.to_string()));
            manifest.write(out_dir)?;
            return Err(CliError::runtime(format!("run failed: {e}")));
        }
    };

    let metrics = MetricsReport::from_matrix(&out.matrix);
    let art = &out.artifacts;
    write_new(&out_dir.join(PERFORMANCE_FILE), out.matrix.to_csv().as_bytes())?;
    write_new(
        &out_dir.join(METRICS_FILE),
        pretty(&MetricsFile { label: label.clone(), report: metrics.clone() }).as_bytes(),
    )?;
    write_new(&out_dir.join(BETAS_FILE), pretty(&art.betas).as_bytes())?;
    write_new(&out_dir.join(SPLITS_FILE), pretty(&art.splits).as_bytes())?;
    let mut artifacts: BTreeMap<String, String> = [
        ("performance", PERFORMANCE_FILE),
        ("metrics", METRICS_FILE),
        ("betas", BETAS_FILE),
        ("splits", SPLITS_FILE),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    if opts.checkpoint {
        if let Some(params) = &art.final_params {
            write_new(&out_dir.join(CHECKPOINT_FILE), params.to_checkpoint_json().as_bytes())?;
            artifacts.insert("checkpoint".into(), CHECKPOINT_FILE.into());
        }
    }

    manifest.artifacts = artifacts;
    manifest.buffers = art.buffer.as_ref().map(|b| b.entries().to_vec()).unwrap_or_default();
    manifest.betas = art
        .betas
        .iter()
        .map(|b| BetaRecord {
            stage: b.stage,
            vertices: b.vertices.clone(),
            beta: b.weights.beta.clone(),
            objective: b.weights.objective,
            converged: b.weights.converged,
        })
        .collect();
    manifest.timings.stages = art.stages.clone();
    manifest.finish(Status::Completed, None);
    manifest.write(out_dir)?;
    Ok(RunSummary { label, matrix: out.matrix, metrics })
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("artifact serializes") + "\n"
}
