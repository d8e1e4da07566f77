//! Content-addressed response cache: one `<hex key>.json` file per request.
//!
//! Each file stores the payload with a SHA-256 checksum of its serialized
//! bytes; entries that fail to parse or verify are treated as misses. Writes
//! go to a temporary file that is then renamed into place.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Usage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub text: String,
    pub usage: Usage,
    pub backend: String,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    checksum: String,
    payload: CachedResponse,
}

fn checksum(payload: &CachedResponse) -> String {
    let bytes = serde_json::to_vec(payload).expect("payload serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub struct ResponseCache {
    dir: PathBuf,
    tmp_seq: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            tmp_seq: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CachedResponse> {
        let raw = fs::read(self.path_for(key)).ok()?;
        let entry: Entry = match serde_json::from_slice(&raw) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("cache entry {key} unreadable, treating as miss: {e}");
                return None;
            }
        };
        if entry.key != key || entry.checksum != checksum(&entry.payload) {
            log::warn!("cache entry {key} failed verification, treating as miss");
            return None;
        }
        Some(entry.payload)
    }

    pub fn put(&self, key: &str, payload: &CachedResponse) -> std::io::Result<()> {
        let entry = Entry {
            key: key.to_string(),
            checksum: checksum(payload),
            payload: payload.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).expect("entry serializes");
        let seq = self.tmp_seq.fetch_add(1, Ordering::Relaxed);
        let tmp = self
            .dir
            .join(format!(".{key}.{}.{seq}.tmp", std::process::id()));
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, self.path_for(key)).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
