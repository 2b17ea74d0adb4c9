//! JSON configuration files. Every schema rejects unknown keys, and the root
//! seeds must be spelled out even where a default exists.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use seaer_core::continual::ExperimentConfig;
use seaer_core::csbm::{generate_stream, CsbmConfig};
use seaer_core::TaskStream;

use crate::error::{CliError, CliResult};
use crate::preset::Preset;

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Parse `bytes` as `T`, first checking that every JSON pointer in
/// `required` is present.
pub fn parse_strict<T: DeserializeOwned>(bytes: &[u8], path: &Path, required: &[&str]) -> CliResult<T> {
    let value = parse_value(bytes, path)?;
    require(&value, path, required)?;
    from_value(value, path)
}

fn parse_value(bytes: &[u8], path: &Path) -> CliResult<serde_json::Value> {
    serde_json::from_slice(bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn require(value: &serde_json::Value, path: &Path, required: &[&str]) -> CliResult<()> {
    match required.iter().find(|p| value.pointer(p).is_none()) {
        Some(p) => Err(CliError::config(format!(
            "{}: missing field `{}`",
            path.display(),
            p.trim_start_matches('/').replace('/', ".")
        ))),
        None => Ok(()),
    }
}

fn from_value<T: DeserializeOwned>(value: serde_json::Value, path: &Path) -> CliResult<T> {
    serde_json::from_value(value).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn load<T: DeserializeOwned>(path: &Path, required: &[&str]) -> CliResult<T> {
    parse_strict(&read_bytes(path)?, path, required)
}

/// cSBM generation config: the generator parameters with `seed` required.
pub fn load_generate(path: &Path) -> CliResult<CsbmConfig> {
    let cfg: CsbmConfig = load(path, &["/seed"])?;
    cfg.validate().map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

/// Where a run's stream comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamSource {
    /// A stream file; relative paths resolve against the config's directory.
    File(PathBuf),
    /// A cSBM stream generated in memory.
    Csbm(CsbmConfig),
}

/// A loaded stream and the bytes its content hash is taken over.
pub struct LoadedStream {
    pub stream: TaskStream,
    pub bytes: Vec<u8>,
    pub source: String,
}

impl StreamSource {
    pub fn load(&self, base: &Path) -> CliResult<LoadedStream> {
        match self {
            StreamSource::File(p) => {
                let path = base.join(p);
                let bytes = read_bytes(&path)?;
                let text = std::str::from_utf8(&bytes)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                let stream = TaskStream::from_json_str(text)
                    .map_err(|e| CliError::loading(&path.display().to_string(), e))?;
                Ok(LoadedStream { stream, bytes, source: path.display().to_string() })
            }
            StreamSource::Csbm(cfg) => {
                cfg.validate().map_err(|e| CliError::config(format!("csbm: {e}")))?;
                let stream = generate_stream(cfg).map_err(|e| CliError::runtime(format!("csbm: {e}")))?;
                let bytes = stream.to_json_bytes();
                Ok(LoadedStream { stream, bytes, source: "csbm".into() })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stream: StreamSource,
    pub experiment: ExperimentConfig,
}

/// Run config with `experiment.seed` (and `stream.csbm.seed` for generated
/// streams) required.
pub fn load_run(path: &Path) -> CliResult<RunConfig> {
    let value = parse_value(&read_bytes(path)?, path)?;
    require(&value, path, &["/experiment/seed"])?;
    if value.pointer("/stream/csbm").is_some() {
        require(&value, path, &["/stream/csbm/seed"])?;
    }
    let cfg: RunConfig = from_value(value, path)?;
    cfg.experiment.validate().map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

/// Grid of cSBM streams times method presets times trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Root seed; trial `k` uses `derive_seed(seed, "sweep/trial", k)` for
    /// both the stream and the run.
    pub seed: u64,
    pub deltas: Vec<usize>,
    pub p_stages: Vec<f64>,
    pub trials: usize,
    #[serde(default = "default_presets")]
    pub presets: Vec<Preset>,
    /// Base generator parameters; `delta`, `p_stage` and `seed` are overridden per cell.
    #[serde(default)]
    pub csbm: CsbmConfig,
    /// Base experiment; method, strategy, alignment and seed are overridden per cell.
    #[serde(default)]
    pub experiment: ExperimentConfig,
    /// Also store each cell's final model.
    #[serde(default)]
    pub checkpoints: bool,
}

fn default_presets() -> Vec<Preset> {
    vec![Preset::Bare]
}

pub fn load_sweep(path: &Path) -> CliResult<SweepConfig> {
    let cfg: SweepConfig = load(path, &["/seed"])?;
    let bad = |m: &str| Err(CliError::config(format!("{}: {m}", path.display())));
    if cfg.deltas.is_empty() || cfg.p_stages.is_empty() || cfg.presets.is_empty() {
        return bad("deltas, p_stages and presets must be non-empty");
    }
    if cfg.trials == 0 {
        return bad("trials must be at least 1");
    }
    for &delta in &cfg.deltas {
        for &p_stage in &cfg.p_stages {
            let c = CsbmConfig { delta, p_stage, ..cfg.csbm.clone() };
            if let Err(e) = c.validate() {
                return bad(&e.to_string());
            }
        }
    }
    cfg.experiment.validate().map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

/// Directory that relative paths inside the config at `path` resolve against.
pub fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}
