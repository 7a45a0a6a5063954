//! Content-addressed on-disk store for raw service responses.
//!
//! Entries live at `<root>/<first two hex chars>/<sha256>.json`. Writes go
//! through a temp file and a rename so readers never observe a torn entry.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::hashing::json_fingerprint;

#[derive(Debug)]
pub struct ContentStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl ContentStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ContentStore {
            root,
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key_for<K: Serialize + ?Sized>(key: &K) -> String {
        json_fingerprint(key)
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        self.root.join(&hash[..2]).join(format!("{hash}.json"))
    }

    /// Returns `None` on a miss or when the entry cannot be decoded.
    pub fn get<V: DeserializeOwned>(&self, hash: &str) -> Option<V> {
        let bytes = fs::read(self.path_for(hash)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                tracing::warn!(hash, error = %e, "ignoring undecodable cache entry");
                None
            }
        }
    }

    pub fn put<V: Serialize + ?Sized>(&self, hash: &str, value: &V) -> std::io::Result<()> {
        let path = self.path_for(hash);
        let body = serde_json::to_vec(value).map_err(std::io::Error::other)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let dir = path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&body)?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}
