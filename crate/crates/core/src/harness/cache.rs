//! Content-addressed score store.
//!
//! One small file per score, named by
//! `sha256(image bytes, scorer id, backbone fingerprint, preprocessing)`.
//! Values are stored as the hex of the f64 bit pattern so cached and fresh
//! scores are bitwise identical. Writes go to a temporary file and are
//! renamed into place, so concurrent readers never see partial entries.
//!
//! `CACHE_INFO` records the backbone fingerprint the cache was built for;
//! opening it with a different backbone fails with [`Error::StaleCache`].

use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CACHE_INFO: &str = "CACHE_INFO";

#[derive(Debug)]
pub struct ScoreCache {
    dir: PathBuf,
    backbone: String,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// sha256 of a file's bytes, streamed.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

impl ScoreCache {
    /// Opens (creating if needed) a cache bound to `backbone_fingerprint`.
    pub fn open(dir: impl Into<PathBuf>, backbone_fingerprint: &str) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let info = dir.join(CACHE_INFO);
        match std::fs::read_to_string(&info) {
            Ok(cached) => {
                let cached = cached.trim();
                if cached != backbone_fingerprint {
                    return Err(Error::StaleCache {
                        dir,
                        cached: cached.to_string(),
                        current: backbone_fingerprint.to_string(),
                    });
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                write_atomic(&info, format!("{backbone_fingerprint}\n").as_bytes())?;
            }
            Err(e) => return Err(Error::io(&info, e)),
        }
        Ok(Self {
            dir,
            backbone: backbone_fingerprint.to_string(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Backbone fingerprint the cache is bound to.
    pub fn backbone(&self) -> &str {
        &self.backbone
    }

    pub fn key(&self, image_hash: &str, scorer_id: &str, preprocess: &str) -> String {
        let mut h = Sha256::new();
        for part in [image_hash, scorer_id, &self.backbone, preprocess] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn entry(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(&key[2..])
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        let v = std::fs::read_to_string(self.entry(key))
            .ok()
            .and_then(|s| u64::from_str_radix(s.trim(), 16).ok())
            .map(f64::from_bits);
        match v {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        v
    }

    pub fn put(&self, key: &str, score: f64) -> Result<()> {
        let path = self.entry(key);
        let parent = path.parent().expect("entry has a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        write_atomic(&path, format!("{:016x}\n", score.to_bits()).as_bytes())
    }

    /// (hits, misses) since opening.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Deletes a cache directory. Refuses directories without `CACHE_INFO` so a
/// mistyped path cannot wipe unrelated data. Returns whether anything was removed.
pub fn purge(dir: impl AsRef<Path>) -> Result<bool> {
    let dir = dir.as_ref();
    if !dir.exists() {
        return Ok(false);
    }
    if !dir.join(CACHE_INFO).is_file() {
        return Err(Error::Input(format!(
            "{} does not look like a score cache (no {CACHE_INFO}); not deleting",
            dir.display()
        )));
    }
    std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(true)
}
