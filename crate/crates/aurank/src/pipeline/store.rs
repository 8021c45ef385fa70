//! On-disk artifact handling: content hashing, versioned model envelopes,
//! and atomic JSON/CSV writes. Cross-job communication happens only through
//! completed files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::io::atomic_write;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Versioned envelope every model file shares: the payload plus the hashes
/// tying it to the exact dataset and run configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile<M> {
    pub format_version: u32,
    pub dataset_manifest_hash: String,
    pub config_hash: String,
    pub model: M,
}

pub fn save_model<M: Serialize>(
    path: &Path,
    model: &M,
    dataset_manifest_hash: &str,
    config_hash: &str,
) -> Result<()> {
    let envelope = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        dataset_manifest_hash: dataset_manifest_hash.to_string(),
        config_hash: config_hash.to_string(),
        model,
    };
    atomic_write(path, &serde_json::to_vec_pretty(&envelope)?)
}

pub fn load_model<M: DeserializeOwned>(path: &Path) -> Result<ModelFile<M>> {
    if !path.exists() {
        return Err(Error::MissingStage(format!("{} not found", path.display())));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let envelope: ModelFile<M> = serde_json::from_slice(&bytes)?;
    if envelope.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "{}: format version {} unsupported (expected {MODEL_FORMAT_VERSION})",
            path.display(),
            envelope.format_version
        )));
    }
    Ok(envelope)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, &serde_json::to_vec_pretty(value)?)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Training-curve CSV: one `epoch,loss` row per epoch.
pub fn save_curve(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (epoch, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{epoch},{loss}\n"));
    }
    atomic_write(path, out.as_bytes())
}
