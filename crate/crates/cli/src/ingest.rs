//! `seaer ingest`: plain-text dataset files to a stream file.

use std::fmt::Write as _;
use std::path::Path;

use seaer_core::ingest::{partition_by_class, to_stream, Ingested, RawDataset};

use crate::error::{CliError, CliResult};
use crate::run::write_new;

pub struct IngestPaths<'a> {
    pub edges: &'a Path,
    pub features: &'a Path,
    pub labels: &'a Path,
}

/// Convert the dataset and write the stream; with `id_map`, also write a CSV
/// of `stream_id,original_id` pairs.
pub fn cmd_ingest(
    input: &IngestPaths<'_>,
    classes_per_task: usize,
    out: &Path,
    id_map: Option<&Path>,
) -> CliResult<Ingested> {
    let raw = RawDataset::read(input.edges, input.features, input.labels)
        .map_err(|e| CliError::loading("ingest", e))?;
    let partition = partition_by_class(&raw.labels, classes_per_task).map_err(|e| CliError::config(e.to_string()))?;
    let ingested = to_stream(&raw, &partition).map_err(|e| CliError::config(e.to_string()))?;
    write_new(out, &ingested.stream.to_json_bytes())?;
    if let Some(path) = id_map {
        let mut csv = String::from("stream_id,original_id\n");
        for (v, o) in ingested.original.iter().enumerate() {
            writeln!(csv, "{v},{o}").unwrap();
        }
        write_new(path, csv.as_bytes())?;
    }
    Ok(ingested)
}
