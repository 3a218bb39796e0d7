//! Content-addressed artifact cache.
//!
//! Every cached file `<path>` has a sidecar `<path>.key` holding the SHA-256
//! of everything that determines its contents. A lookup hits only when the
//! sidecar matches the freshly computed key, so changing any upstream input
//! or parameter forces recomputation.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::io::{atomic_write, IoError};

/// Accumulates the inputs of a cache key.
#[derive(Clone, Default)]
pub struct KeyBuilder(Sha256);

impl KeyBuilder {
    pub fn new(kind: &str) -> Self {
        let mut k = Self::default();
        k.add_str(kind);
        k
    }

    /// Length-prefixed, so `("ab","c")` and `("a","bc")` differ.
    pub fn add(&mut self, bytes: &[u8]) -> &mut Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn add_str(&mut self, s: &str) -> &mut Self {
        self.add(s.as_bytes())
    }

    pub fn add_u64(&mut self, v: u64) -> &mut Self {
        self.add(&v.to_le_bytes())
    }

    pub fn finish(&self) -> String {
        hex(&self.0.clone().finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

fn key_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|f| f.to_os_string()).unwrap_or_default();
    name.push(".key");
    path.with_file_name(name)
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    /// `cache/<policy_id>/<layer>/gmm_<n>.json`
    pub fn gmm_rel(policy_id: &str, layer: &str, n_components: usize) -> PathBuf {
        Path::new("cache").join(policy_id).join(layer).join(format!("gmm_{n_components}.json"))
    }

    /// `cache/<policy_id>/<layer>/activations.txt`
    pub fn activations_rel(policy_id: &str, layer: &str) -> PathBuf {
        Path::new("cache").join(policy_id).join(layer).join("activations.txt")
    }

    /// True when `rel` exists and its sidecar matches `key`.
    pub fn is_fresh(&self, rel: impl AsRef<Path>, key: &str) -> bool {
        let path = self.path(rel);
        path.exists() && std::fs::read_to_string(key_path(&path)).is_ok_and(|k| k.trim() == key)
    }

    /// Returns the cached contents when fresh.
    pub fn get(&self, rel: impl AsRef<Path>, key: &str) -> Option<Vec<u8>> {
        let rel = rel.as_ref();
        if !self.is_fresh(rel, key) {
            return None;
        }
        std::fs::read(self.path(rel)).ok()
    }

    /// Stores `contents` then its key; a crash in between leaves a stale entry,
    /// never a wrong one.
    pub fn put(&self, rel: impl AsRef<Path>, key: &str, contents: &[u8]) -> Result<(), IoError> {
        let path = self.path(rel);
        let kp = key_path(&path);
        if kp.exists() {
            std::fs::remove_file(&kp).map_err(|source| IoError::Io { path: kp.clone(), source })?;
        }
        atomic_write(&path, contents)?;
        atomic_write(&kp, format!("{key}\n").as_bytes())
    }

    /// Returns the cached value or computes, stores and returns it.
    pub fn get_or_compute<E: From<IoError>>(
        &self,
        rel: impl AsRef<Path>,
        key: &str,
        compute: impl FnOnce() -> Result<Vec<u8>, E>,
    ) -> Result<(Vec<u8>, bool), E> {
        let rel = rel.as_ref();
        if let Some(bytes) = self.get(rel, key) {
            return Ok((bytes, true));
        }
        let bytes = compute()?;
        self.put(rel, key, &bytes)?;
        Ok((bytes, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_is_length_prefixed() {
        let a = KeyBuilder::new("k").add_str("ab").add_str("c").finish();
        let b = KeyBuilder::new("k").add_str("a").add_str("bc").finish();
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn hit_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let c = Cache::new(dir.path());
        let rel = Cache::gmm_rel("p", "fc0", 2);
        assert_eq!(rel, Path::new("cache/p/fc0/gmm_2.json"));
        assert!(c.get(&rel, "k1").is_none());
        let (v, hit) = c.get_or_compute::<IoError>(&rel, "k1", || Ok(b"one".to_vec())).unwrap();
        assert_eq!((v.as_slice(), hit), (&b"one"[..], false));
        let (v, hit) = c.get_or_compute::<IoError>(&rel, "k1", || Ok(b"two".to_vec())).unwrap();
        assert_eq!((v.as_slice(), hit), (&b"one"[..], true));
        let (v, hit) = c.get_or_compute::<IoError>(&rel, "k2", || Ok(b"two".to_vec())).unwrap();
        assert_eq!((v.as_slice(), hit), (&b"two"[..], false));
    }
}
