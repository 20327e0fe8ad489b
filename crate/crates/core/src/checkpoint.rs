//! Checkpoint directories: `manifest.json`, `weights.bin` and `config.json`.
//!
//! `weights.bin` holds every parameter as little-endian `f32`, concatenated
//! in manifest order. Offsets and lengths in the manifest are in bytes.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MegaNet, MegaNetConfig};
use crate::tensor::Shape;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub dtype: String,
    pub offset: usize,
    pub length: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
}

/// Write `net` to `dir`, creating it if needed. `extra` files (name and
/// JSON value) are stored alongside for callers that need more context.
pub fn save(net: &MegaNet, dir: &Path, extra: &[(&str, serde_json::Value)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut weights = Vec::new();
    let mut tensors = Vec::with_capacity(net.store.len());
    for (_, p) in net.store.iter() {
        let offset = weights.len();
        for &v in p.tensor.data() {
            weights.extend_from_slice(&(v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().dims(),
            dtype: "f32".into(),
            offset,
            length: weights.len() - offset,
            trainable: p.trainable,
        });
    }
    let manifest = CheckpointManifest { format_version: FORMAT_VERSION, tensors };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&dir.join(CONFIG_FILE), &net.config)?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, &weights).map_err(|e| Error::io(&wpath, e))?;
    for (name, value) in extra {
        write_json(&dir.join(name), value)?;
    }
    Ok(())
}

/// Rebuild the network described by `dir/config.json` and fill in the stored weights.
pub fn load(dir: &Path) -> Result<MegaNet> {
    let config: MegaNetConfig = read_json(&dir.join(CONFIG_FILE))?;
    let manifest: CheckpointManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let wpath = dir.join(WEIGHTS_FILE);
    let weights = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let total: usize = manifest.tensors.iter().map(|t| t.length).sum();
    if total != weights.len() {
        return Err(Error::Checkpoint(format!(
            "size mismatch: manifest describes {total} bytes, {WEIGHTS_FILE} holds {}",
            weights.len()
        )));
    }

    let mut net = MegaNet::build(config, 0)?;
    let mut seen = HashSet::new();
    for entry in &manifest.tensors {
        if entry.dtype != "f32" {
            return Err(Error::Checkpoint(format!("'{}': unsupported dtype {}", entry.name, entry.dtype)));
        }
        if !seen.insert(entry.name.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate parameter name '{}'", entry.name)));
        }
        let shape = Shape::from_dims(entry.shape);
        if entry.length != shape.numel() * 4 {
            return Err(Error::Checkpoint(format!(
                "size mismatch: '{}' has shape {shape:?} but {} bytes",
                entry.name, entry.length
            )));
        }
        let bytes = entry
            .offset
            .checked_add(entry.length)
            .and_then(|end| weights.get(entry.offset..end))
            .ok_or_else(|| Error::Checkpoint(format!("'{}' lies outside {WEIGHTS_FILE}", entry.name)))?;
        let values = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        net.store.assign(&entry.name, shape, values)?;
    }
    if let Some((_, missing)) = net.store.iter().find(|(_, p)| !seen.contains(p.name.as_str())) {
        return Err(Error::Checkpoint(format!("parameter '{}' missing from checkpoint", missing.name)));
    }
    Ok(net)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
