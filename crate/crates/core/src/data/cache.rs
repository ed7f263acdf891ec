//! Processed-split cache: a JSON document carrying a format tag, the split
//! seed and a SHA-256 of the canonical payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetSplit, EncodedDataset};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &str = "dml-split-cache";
pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Payload {
    dataset: EncodedDataset,
    split: DatasetSplit,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    magic: String,
    version: u32,
    seed: u64,
    sha256: String,
    payload: serde_json::Value,
}

fn digest(payload: &serde_json::Value) -> Result<String> {
    let text = serde_json::to_string(payload).map_err(|e| Error::Data(e.to_string()))?;
    let hash = Sha256::digest(text.as_bytes());
    Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn save_cache(path: &Path, dataset: &EncodedDataset, split: &DatasetSplit) -> Result<()> {
    let payload = serde_json::to_value(Payload {
        dataset: dataset.clone(),
        split: split.clone(),
    })
    .map_err(|e| Error::Data(e.to_string()))?;
    let file = CacheFile {
        magic: CACHE_MAGIC.into(),
        version: CACHE_VERSION,
        seed: split.seed,
        sha256: digest(&payload)?,
        payload,
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a cache, rejecting unknown versions and content-hash mismatches.
pub fn load_cache(path: &Path) -> Result<(EncodedDataset, DatasetSplit)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CacheFile =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad cache file: {e}")))?;
    if file.magic != CACHE_MAGIC || file.version != CACHE_VERSION {
        return Err(Error::Data(format!(
            "unsupported cache format `{} v{}`",
            file.magic, file.version
        )));
    }
    if digest(&file.payload)? != file.sha256 {
        return Err(Error::Data("cache content hash mismatch".into()));
    }
    let payload: Payload =
        serde_json::from_value(file.payload).map_err(|e| Error::Data(e.to_string()))?;
    if payload.split.seed != file.seed {
        return Err(Error::Data("cache seed does not match its split".into()));
    }
    Ok((payload.dataset, payload.split))
}
