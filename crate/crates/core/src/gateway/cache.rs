use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{CacheKey, Completion, GatewayError};

/// Content-addressed completion store: one JSON record per key at
/// `<dir>/<key[0..2]>/<key>.json`. Writes go through a temp file and a
/// rename, so concurrent writers never expose partial records.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Record {
    key: String,
    backend_id: String,
    completion: Completion,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        let shard = key.0.get(..2).unwrap_or("xx");
        self.dir.join(shard).join(format!("{}.json", key.0))
    }

    pub fn load(&self, key: &CacheKey) -> Result<Option<Completion>, GatewayError> {
        let path = self.path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Io(format!("{}: {e}", path.display()))),
        };
        let corrupt = |message: String| GatewayError::CacheCorruption {
            path: path.display().to_string(),
            message,
        };
        let record: Record = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
        if record.key != key.0 {
            return Err(corrupt(format!("record holds key {}", record.key)));
        }
        Ok(Some(record.completion))
    }

    pub fn store(
        &self,
        key: &CacheKey,
        backend_id: &str,
        completion: &Completion,
    ) -> Result<(), GatewayError> {
        let path = self.path(key);
        let io = |e: std::io::Error| GatewayError::Io(format!("{}: {e}", path.display()));
        let parent = path.parent().expect("cache path has a shard directory");
        fs::create_dir_all(parent).map_err(io)?;
        let record = Record {
            key: key.0.clone(),
            backend_id: backend_id.to_owned(),
            completion: completion.clone(),
        };
        let body = serde_json::to_vec(&record).expect("cache record serializes");
        let tmp = parent.join(format!(
            ".{}.{}.{}.tmp",
            key.0,
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&body).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, &path).map_err(io)
    }

    /// Generic JSON values under the same layout, for non-completion callers.
    pub fn load_value<T: for<'de> Deserialize<'de>>(
        &self,
        key: &CacheKey,
    ) -> Result<Option<T>, GatewayError> {
        match self.load(key)? {
            None => Ok(None),
            Some(c) => serde_json::from_str(&c.text).map(Some).map_err(|e| {
                GatewayError::CacheCorruption {
                    path: self.path(key).display().to_string(),
                    message: e.to_string(),
                }
            }),
        }
    }

    pub fn store_value<T: Serialize>(
        &self,
        key: &CacheKey,
        namespace: &str,
        value: &T,
    ) -> Result<(), GatewayError> {
        let text = serde_json::to_string(value).expect("cache value serializes");
        self.store(key, namespace, &Completion { text, token_logprobs: Vec::new() })
    }
}
