use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::GenConfig;
use super::GatewayError;

/// File name of the response log inside a cache directory.
pub const CACHE_FILE: &str = "responses.jsonl";

/// One cached response, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub fingerprint: String,
    pub prompt_sha: String,
    pub config: GenConfig,
    pub response_text: String,
    pub timestamp: u64,
}

struct Store {
    entries: HashMap<String, String>,
    file: Option<File>,
}

/// Response cache keyed by request fingerprint, optionally backed by an
/// append-only JSONL file.
pub struct ResponseCache {
    path: Option<PathBuf>,
    store: Mutex<Store>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { path: None, store: Mutex::new(Store { entries: HashMap::new(), file: None }) }
    }

    /// Opens (creating if needed) `dir/responses.jsonl` and loads every
    /// entry. A line that does not parse is reported as corruption.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| GatewayError::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| GatewayError::Io(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| GatewayError::CacheCorruption {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(entry.fingerprint, entry.response_text);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self { path: Some(path), store: Mutex::new(Store { entries, file: Some(file) }) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, fingerprint: &str) -> Option<String> {
        self.store.lock().expect("cache lock").entries.get(fingerprint).cloned()
    }

    pub fn len(&self) -> usize {
        self.store.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores a response; the first stored text for a fingerprint wins.
    pub fn insert(&self, fingerprint: &str, prompt: &str, cfg: &GenConfig, text: &str) -> Result<(), GatewayError> {
        let mut store = self.store.lock().expect("cache lock");
        if store.entries.contains_key(fingerprint) {
            return Ok(());
        }
        if let Some(file) = store.file.as_mut() {
            let entry = CacheEntry {
                fingerprint: fingerprint.to_owned(),
                prompt_sha: super::config::sha256_hex(prompt),
                config: cfg.clone(),
                response_text: text.to_owned(),
                timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            };
            let mut line = serde_json::to_string(&entry).expect("serializable");
            line.push('\n');
            file.write_all(line.as_bytes()).and_then(|_| file.flush()).map_err(|e| GatewayError::Io(e.to_string()))?;
        }
        store.entries.insert(fingerprint.to_owned(), text.to_owned());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{default_config, Stage};

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = default_config(Stage::Stage1);
        {
            let cache = ResponseCache::open(dir.path()).unwrap();
            cache.insert("f1", "prompt", &cfg, "yes").unwrap();
            cache.insert("f1", "prompt", &cfg, "ignored").unwrap();
        }
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.get("f1").as_deref(), Some("yes"));
        assert_eq!(cache.len(), 1);
        let raw = std::fs::read_to_string(dir.path().join(CACHE_FILE)).unwrap();
        assert_eq!(raw.lines().count(), 1);
        let entry: CacheEntry = serde_json::from_str(raw.lines().next().unwrap()).unwrap();
        assert_eq!(entry.prompt_sha.len(), 64);
    }

    #[test]
    fn corrupt_line_detected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(CACHE_FILE), "{not json\n").unwrap();
        assert!(matches!(ResponseCache::open(dir.path()), Err(GatewayError::CacheCorruption { line: 1, .. })));
    }
}
