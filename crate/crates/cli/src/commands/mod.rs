pub mod attention;
pub mod encode;
pub mod eval;
pub mod synth;
pub mod train;

use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::data(format!("{}: {e}", parent.display())))?;
    }
    mesti_core::checkpoint::write_json(path, value).map_err(CliError::data)
}

pub fn load_manifest(path: &Path) -> CliResult<mesti_core::data::DatasetManifest> {
    let m = mesti_core::data::DatasetManifest::load(path).map_err(CliError::usage)?;
    for w in &m.warnings {
        log::warn!("{w}");
    }
    Ok(m)
}
