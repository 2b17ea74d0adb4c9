//! `seaer sweep`: presets times a (delta, p_stage) grid of cSBM streams times
//! trials, one run directory per cell plus a tidy CSV.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use seaer_core::csbm::CsbmConfig;
use seaer_core::rng::derive_seed;

use crate::config::{load_sweep, RunConfig, StreamSource, SweepConfig};
use crate::error::{CliError, CliResult};
use crate::preset::Preset;
use crate::run::{execute, write_new, RunOptions};

pub const SWEEP_CSV_VERSION: &str = "# seaer sweep v1";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_CONFIG_FILE: &str = "sweep_config.json";

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SEAER_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub preset: Preset,
    pub delta: usize,
    pub p_stage: f64,
    pub trial: usize,
    pub seed: u64,
    pub fap: Option<f64>,
    pub faf: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
struct Cell {
    preset: Preset,
    delta: usize,
    p_stage: f64,
    trial: usize,
    seed: u64,
}

impl Cell {
    fn dir_name(&self) -> String {
        format!("{}_d{}_p{}_t{}", self.preset, self.delta, self.p_stage, self.trial)
    }

    fn run_config(&self, sweep: &SweepConfig) -> RunConfig {
        RunConfig {
            stream: StreamSource::Csbm(CsbmConfig {
                delta: self.delta,
                p_stage: self.p_stage,
                seed: self.seed,
                ..sweep.csbm.clone()
            }),
            experiment: seaer_core::continual::ExperimentConfig {
                seed: self.seed,
                ..self.preset.apply(&sweep.experiment)
            },
        }
    }
}

/// Seed of trial `k` under root `seed`, shared by the stream and the run.
pub fn trial_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, "sweep/trial", k as u64)
}

fn cells(cfg: &SweepConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &preset in &cfg.presets {
        for &delta in &cfg.deltas {
            for &p_stage in &cfg.p_stages {
                for trial in 0..cfg.trials {
                    out.push(Cell { preset, delta, p_stage, trial, seed: trial_seed(cfg.seed, trial) });
                }
            }
        }
    }
    out
}

fn run_cell(cell: &Cell, cfg: &SweepConfig, out_dir: &Path) -> SweepRow {
    let run_cfg = cell.run_config(cfg);
    let result = run_cfg.stream.load(Path::new("")).and_then(|loaded| {
        let echo = serde_json::to_value(&run_cfg).expect("config serializes");
        execute(
            &out_dir.join(cell.dir_name()),
            "sweep",
            echo,
            &loaded,
            &run_cfg.experiment,
            RunOptions { checkpoint: cfg.checkpoints },
        )
    });
    let (fap, faf, error) = match result {
        Ok(s) => (Some(s.metrics.fap), s.metrics.faf, None),
        Err(e) => {
            log::warn!("cell {} failed: {e}", cell.dir_name());
            (None, None, Some(e.message))
        }
    };
    SweepRow {
        preset: cell.preset,
        delta: cell.delta,
        p_stage: cell.p_stage,
        trial: cell.trial,
        seed: cell.seed,
        fap,
        faf,
        error,
    }
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_VERSION}\npreset,delta,p_stage,trial,seed,fap,faf,status\n");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let status = if r.error.is_some() { "failed" } else { "completed" };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{status}",
            r.preset,
            r.delta,
            r.p_stage,
            r.trial,
            r.seed,
            opt(r.fap),
            opt(r.faf)
        )
        .unwrap();
    }
    out
}

/// Worker pool sized by `SEAER_THREADS` when set.
pub fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::runtime(format!("thread pool: {e}")))
}

/// Run every cell; failed cells are recorded and the rest still run. Returns
/// the rows, or a runtime error after writing outputs if any cell failed.
pub fn cmd_sweep(config: &Path, out_dir: &Path) -> CliResult<Vec<SweepRow>> {
    let cfg = load_sweep(config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let echo = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
    write_new(&out_dir.join(SWEEP_CONFIG_FILE), echo.as_bytes())?;
    let cells = cells(&cfg);
    let pool = thread_pool()?;
    let rows: Vec<SweepRow> = pool.install(|| cells.par_iter().map(|c| run_cell(c, &cfg, out_dir)).collect());
    write_new(&out_dir.join(SWEEP_FILE), to_csv(&rows).as_bytes())?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(CliError::runtime(format!("{failed} of {} sweep cells failed", rows.len())));
    }
    Ok(rows)
}
