//! Optional JSON config file and its merge with built-in defaults.
//!
//! Precedence is flags over file over defaults. Each section of the file is
//! merged key by key into the serialized defaults before deserializing. A
//! file may set any subset of fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Path the config was read from, if any.
    #[serde(skip_deserializing)]
    pub path: Option<PathBuf>,
    pub model: Option<Value>,
    pub train: Option<Value>,
    pub pipeline: Option<Value>,
    pub synth: Option<Value>,
    pub jobs: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        cfg.path = Some(path.to_path_buf());
        Ok(cfg)
    }

    /// Output directory: flag or `MESTI_OUT_DIR` first, then the file, then `default`.
    pub fn out_dir(&self, flag_or_env: Option<&Path>, default: &str) -> PathBuf {
        flag_or_env.map(Path::to_path_buf).or_else(|| self.out_dir.clone()).unwrap_or_else(|| PathBuf::from(default))
    }

    pub fn jobs(&self, flag: Option<usize>) -> usize {
        flag.or(self.jobs).unwrap_or(0)
    }
}

/// Overlay `section` of the config file onto `base`.
pub fn merge<T: Serialize + DeserializeOwned>(base: &T, overlay: Option<&Value>, section: &str) -> CliResult<T> {
    let mut value = serde_json::to_value(base).map_err(CliError::usage)?;
    if let Some(overlay) = overlay {
        merge_value(&mut value, overlay);
    }
    serde_json::from_value(value).map_err(|e| CliError::usage(format!("config section '{section}': {e}")))
}

fn merge_value(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
