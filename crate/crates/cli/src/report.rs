//! `seaer report`: mean and spread of FAP / FAF per variant over completed runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, Status, MANIFEST_FILE};
use crate::run::{write_new, MetricsFile, METRICS_FILE};

pub const REPORT_CSV_VERSION: &str = "# seaer report v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub stream: String,
    pub runs: usize,
    pub fap_mean: f64,
    pub fap_std: f64,
    /// `None` when no run in the group records forgetting.
    pub faf: Option<(f64, f64)>,
}

/// Run directories at or directly below each root.
fn run_dirs(roots: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for root in roots {
        if root.join(MANIFEST_FILE).is_file() {
            out.push(root.clone());
            continue;
        }
        let entries = std::fs::read_dir(root).map_err(|e| CliError::io(root, e))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).is_file())
            .collect();
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn stream_key(m: &Manifest) -> String {
    match m.config.pointer("/stream/csbm") {
        Some(c) => format!(
            "csbm(delta={},p_stage={},stages={})",
            c["delta"], c["p_stage"], c["num_stages"]
        ),
        None => m.stream.source.clone(),
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Aggregate every completed run found under `roots`; incomplete runs are skipped.
pub fn collect(roots: &[PathBuf]) -> CliResult<Vec<ReportRow>> {
    let mut groups: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for dir in run_dirs(roots)? {
        let m = Manifest::read(&dir)?;
        if m.status != Status::Completed {
            log::info!("skipping {} ({:?})", dir.display(), m.status);
            continue;
        }
        let path = dir.join(METRICS_FILE);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        let metrics: MetricsFile =
            serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let entry = groups.entry((stream_key(&m), m.label.clone())).or_default();
        entry.0.push(metrics.report.fap);
        entry.1.extend(metrics.report.faf);
    }
    Ok(groups
        .into_iter()
        .map(|((stream, label), (faps, fafs))| {
            let (fap_mean, fap_std) = mean_std(&faps);
            ReportRow {
                label,
                stream,
                runs: faps.len(),
                fap_mean,
                fap_std,
                faf: (!fafs.is_empty()).then(|| mean_std(&fafs)),
            }
        })
        .collect())
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_CSV_VERSION}\nstream,label,runs,fap_mean,fap_std,faf_mean,faf_std\n");
    for r in rows {
        let (fm, fs) = r.faf.map(|(m, s)| (m.to_string(), s.to_string())).unwrap_or_default();
        writeln!(out, "\"{}\",{},{},{},{},{fm},{fs}", r.stream, r.label, r.runs, r.fap_mean, r.fap_std).unwrap();
    }
    out
}

pub fn cmd_report(roots: &[PathBuf], out: Option<&Path>) -> CliResult<Vec<ReportRow>> {
    let rows = collect(roots)?;
    if rows.is_empty() {
        return Err(CliError::config("no completed runs found"));
    }
    if let Some(out) = out {
        write_new(out, to_csv(&rows).as_bytes())?;
    }
    Ok(rows)
}
