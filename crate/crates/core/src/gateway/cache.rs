use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::fsutil::write_json_atomic;

/// One cached request/response pair. The raw provider response is kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_hash: String,
    pub model_id: String,
    pub temperature: f64,
    pub prompt: String,
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub raw_response: serde_json::Value,
    pub created_at: DateTime<Utc>,
}

/// Content-addressed response cache: memory in front of an optional directory
/// of `<hash[0..2]>/<hash>.json` files.
#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, CacheEntry>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            memory: RwLock::new(HashMap::new()),
        }
    }

    pub fn on_disk(dir: PathBuf) -> Self {
        Self {
            dir: Some(dir),
            memory: RwLock::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, hash: &str) -> Option<PathBuf> {
        let shard = hash.get(..2).unwrap_or("00");
        self.dir.as_ref().map(|d| d.join(shard).join(format!("{hash}.json")))
    }

    pub fn get(&self, hash: &str) -> Result<Option<CacheEntry>, GatewayError> {
        if let Some(hit) = self.memory.read().unwrap_or_else(|e| e.into_inner()).get(hash) {
            return Ok(Some(hit.clone()));
        }
        let Some(path) = self.path_for(hash) else {
            return Ok(None);
        };
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        if entry.request_hash != hash {
            return Err(GatewayError::Cache(format!("{}: hash mismatch", path.display())));
        }
        self.memory
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(hash.to_string(), entry.clone());
        Ok(Some(entry))
    }

    pub fn put(&self, entry: CacheEntry) -> Result<(), GatewayError> {
        if let Some(path) = self.path_for(&entry.request_hash) {
            write_json_atomic(&path, &entry).map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        }
        self.memory
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(entry.request_hash.clone(), entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memory.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
