//! Model files on disk.

use std::path::Path;

use evc_core::model::{ArchitectureConfig, ModelParams};

use crate::error::{CliError, CliResult};

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_model(path: &Path, params: &ModelParams) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, params.encode()).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Reads a model and checks it against `expected`.
pub fn load_model(path: &Path, expected: &ArchitectureConfig) -> CliResult<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    ModelParams::decode(&bytes, expected).map_err(|e| CliError::from(e).context(path.display()))
}
