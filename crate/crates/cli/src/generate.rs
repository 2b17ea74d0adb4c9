//! `seaer generate`: write a cSBM stream file.

use std::path::Path;

use seaer_core::csbm::generate_stream;
use seaer_core::TaskStream;

use crate::config::load_generate;
use crate::error::{CliError, CliResult};

pub fn cmd_generate(config: &Path, out: &Path) -> CliResult<TaskStream> {
    let cfg = load_generate(config)?;
    let stream = generate_stream(&cfg).map_err(|e| CliError::runtime(e.to_string()))?;
    std::fs::write(out, stream.to_json_bytes()).map_err(|e| CliError::io(out, e))?;
    Ok(stream)
}
