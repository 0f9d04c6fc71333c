//! Write-once disk cache for chat exchanges, keyed by the request hash
//! under a two-level hex fanout (`ab/cd/abcd….json`). Each entry stores the
//! full request next to its response so a run's outgoing traffic can be
//! audited after the fact.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: ChatRequest,
    pub response: ChatResponse,
}

pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: PathBuf) -> Self {
        DiskCache { root }
    }

    pub fn root(&self) -> &std::path::Path {
        &self.root
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root
            .join(&key[0..2])
            .join(&key[2..4])
            .join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<ChatResponse>, GatewayError> {
        let path = self.path_for(key);
        match fs::read(&path) {
            Ok(bytes) => {
                let entry: CacheEntry =
                    serde_json::from_slice(&bytes).map_err(|e| GatewayError::Cache {
                        path: path.clone(),
                        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
                    })?;
                Ok(Some(entry.response))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(GatewayError::Cache { path, source }),
        }
    }

    /// Atomic write via temp-then-rename. An already-present entry is left
    /// untouched: entries are immutable once written.
    pub fn put(
        &self,
        key: &str,
        request: &ChatRequest,
        response: &ChatResponse,
    ) -> Result<(), GatewayError> {
        let path = self.path_for(key);
        if path.exists() {
            return Ok(());
        }
        let parent = path.parent().expect("fanout parent");
        fs::create_dir_all(parent).map_err(|source| GatewayError::Cache {
            path: parent.to_path_buf(),
            source,
        })?;
        let tmp = parent.join(format!(".{key}.tmp"));
        let entry = CacheEntry {
            request: request.clone(),
            response: response.clone(),
        };
        let bytes = serde_json::to_vec(&entry).expect("serializable entry");
        fs::write(&tmp, bytes).map_err(|source| GatewayError::Cache {
            path: tmp.clone(),
            source,
        })?;
        fs::rename(&tmp, &path).map_err(|source| GatewayError::Cache { path, source })
    }

    /// List cached request keys, sorted.
    pub fn keys(&self) -> Vec<String> {
        let mut keys = Vec::new();
        let Ok(level1) = fs::read_dir(&self.root) else {
            return keys;
        };
        for l1 in level1.flatten() {
            let Ok(level2) = fs::read_dir(l1.path()) else {
                continue;
            };
            for l2 in level2.flatten() {
                let Ok(files) = fs::read_dir(l2.path()) else {
                    continue;
                };
                for f in files.flatten() {
                    if let Some(name) = f.path().file_stem().and_then(|s| s.to_str()) {
                        keys.push(name.to_string());
                    }
                }
            }
        }
        keys.sort();
        keys
    }

    /// Load every cached exchange, sorted by key. Tests use this to assert
    /// properties of the requests a run actually issued.
    pub fn entries(&self) -> Result<Vec<CacheEntry>, GatewayError> {
        let mut entries = Vec::new();
        for key in self.keys() {
            let path = self.path_for(&key);
            let bytes = fs::read(&path).map_err(|source| GatewayError::Cache {
                path: path.clone(),
                source,
            })?;
            let entry: CacheEntry =
                serde_json::from_slice(&bytes).map_err(|e| GatewayError::Cache {
                    path,
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
                })?;
            entries.push(entry);
        }
        Ok(entries)
    }
}
