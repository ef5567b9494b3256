//! Content-addressed response cache.
//!
//! Keys are `sha256(role \n model_id \n canonical request bytes)`. Records
//! are write-once JSON files under `<dir>/<key[..2]>/<key>.json`, written
//! through a temp file and renamed into place. An in-memory layer fronts the
//! directory; without a directory the cache is memory-only.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BackendRole;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub role: String,
    pub model_id: String,
    pub created_at_unix: u64,
    /// Response body exactly as received.
    pub response: String,
}

pub fn cache_key(role: BackendRole, model_id: &str, request: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(role.as_str().as_bytes());
    h.update(b"\n");
    h.update(model_id.as_bytes());
    h.update(b"\n");
    h.update(request);
    hex::encode(h.finalize())
}

#[derive(Debug, Default)]
pub struct RequestCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, Arc<CacheRecord>>>,
}

impl RequestCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            memory: RwLock::default(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(&key[..2]).join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<Arc<CacheRecord>> {
        if let Some(hit) = self.memory.read().expect("cache lock").get(key) {
            return Some(hit.clone());
        }
        let path = self.path_for(key)?;
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheRecord>(&bytes) {
            Ok(record) if record.key == key => {
                let record = Arc::new(record);
                self.memory
                    .write()
                    .expect("cache lock")
                    .insert(key.to_string(), record.clone());
                Some(record)
            }
            _ => {
                log::warn!("ignoring unreadable cache record {}", path.display());
                None
            }
        }
    }

    /// Stores a response. An existing record for the key is left untouched.
    pub fn put(&self, key: &str, role: BackendRole, model_id: &str, response: &[u8]) -> std::io::Result<()> {
        let record = CacheRecord {
            key: key.to_string(),
            role: role.as_str().to_string(),
            model_id: model_id.to_string(),
            created_at_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            response: String::from_utf8_lossy(response).into_owned(),
        };
        if let Some(path) = self.path_for(key) {
            if !path.exists() {
                let parent = path.parent().expect("sharded path has a parent");
                fs::create_dir_all(parent)?;
                let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
                tmp.write_all(&serde_json::to_vec(&record).expect("record serializes"))?;
                tmp.as_file().sync_all()?;
                // A concurrent writer may have won; both wrote the same content.
                if let Err(e) = tmp.persist_noclobber(&path) {
                    if !path.exists() {
                        return Err(e.error);
                    }
                }
            }
        }
        self.memory
            .write()
            .expect("cache lock")
            .entry(key.to_string())
            .or_insert_with(|| Arc::new(record));
        Ok(())
    }

    pub fn len_in_memory(&self) -> usize {
        self.memory.read().expect("cache lock").len()
    }
}
