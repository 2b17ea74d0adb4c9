//! Command-line front end for SEA-ER experiments: stream generation and
//! ingestion, single runs, grid sweeps, distortion profiles and reports.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 IO error,
//! 4 runtime failure.

pub mod config;
pub mod distortion;
pub mod error;
pub mod generate;
pub mod ingest;
pub mod manifest;
pub mod preset;
pub mod report;
pub mod run;
pub mod sweep;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult, Kind};

#[derive(Debug, Parser)]
#[command(name = "seaer", version, about = "Graph continual learning experiments with structure-aware replay")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a cSBM stream file from a generator config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment and store its artifacts under OUT_DIR.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Skip writing the final model.
        #[arg(long)]
        no_checkpoint: bool,
    },
    /// Run presets over a grid of cSBM streams.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Embedding distance per hop from an anchor set, for a stored model.
    Distortion {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the graph of tasks 1..=UPTO (default: all tasks).
        #[arg(long)]
        upto: Option<usize>,
        /// Comma-separated anchor vertex ids.
        #[arg(long, value_delimiter = ',')]
        anchors: Option<Vec<usize>>,
        /// Task whose train split supplies the anchors.
        #[arg(long, default_value_t = 1)]
        anchor_task: usize,
        /// Experiment seed that drew the splits.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        max_hops: u32,
    },
    /// Summarize completed runs found in the given directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert an edge list, feature CSV and label CSV into a stream file.
    Ingest {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 2)]
        classes_per_task: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write a stream_id,original_id CSV.
        #[arg(long)]
        id_map: Option<PathBuf>,
    },
}

/// Execute a parsed command, printing a short result summary to stdout.
pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let s = generate::cmd_generate(&config, &out)?;
            println!("wrote {} ({} tasks, {} vertices)", out.display(), s.num_tasks(), s.num_vertices());
        }
        Command::Run { config, out_dir, no_checkpoint } => {
            let s = run::cmd_run(&config, &out_dir, run::RunOptions { checkpoint: !no_checkpoint })?;
            let faf = s.metrics.faf.map_or("n/a".to_string(), |f| format!("{f:.4}"));
            println!("{}: FAP {:.4} FAF {faf}", s.label, s.metrics.fap);
        }
        Command::Sweep { config, out_dir } => {
            let rows = sweep::cmd_sweep(&config, &out_dir)?;
            println!("{} cells written to {}", rows.len(), out_dir.join(sweep::SWEEP_FILE).display());
        }
        Command::Distortion { checkpoint, stream, out, upto, anchors, anchor_task, seed, max_hops } => {
            let opts = distortion::DistortionOptions { upto, anchors, anchor_task, seed, max_hops };
            let p = distortion::cmd_distortion(&checkpoint, &stream, &out, &opts)?;
            let alpha = p.alpha.map_or("undefined".to_string(), |a| format!("{a:.6}"));
            println!("slope {:.6} alpha {alpha}", p.slope);
        }
        Command::Report { dirs, out } => {
            let rows = report::cmd_report(&dirs, out.as_deref())?;
            print!("{}", report::to_csv(&rows));
        }
        Command::Ingest { edges, features, labels, classes_per_task, out, id_map } => {
            let paths = ingest::IngestPaths { edges: &edges, features: &features, labels: &labels };
            let got = ingest::cmd_ingest(&paths, classes_per_task, &out, id_map.as_deref())?;
            let s = &got.stream;
            println!("wrote {} ({} tasks, {} vertices, {} edges)", out.display(), s.num_tasks(), s.num_vertices(), s.edges().len());
        }
    }
    Ok(())
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
