//! Content-addressed on-disk request/response cache: one JSON file per
//! cache key, written atomically (temp file + rename).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{CacheKey, GatewayError};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// One cached exchange: the full request and the raw response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub kind: String,
    pub request: serde_json::Value,
    pub response: serde_json::Value,
}

#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(Self { dir })
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.0))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(e.to_string())),
        };
        let entry: CacheEntry =
            serde_json::from_slice(&bytes).map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        let path = self.path_for(&entry.key);
        let bytes = serde_json::to_vec_pretty(entry).map_err(|e| GatewayError::Cache(e.to_string()))?;
        let tmp = self.dir.join(format!(
            ".{}.{}.tmp",
            entry.key.0,
            TMP_COUNTER.fetch_add(1, Ordering::SeqCst)
        ));
        fs::write(&tmp, &bytes).map_err(|e| GatewayError::Cache(e.to_string()))?;
        fs::rename(&tmp, &path).map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(())
    }
}
