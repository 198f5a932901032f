//! Embedding cache and precomputed embeddings.
//!
//! Both share one binary layout: an 8-byte magic, a little-endian `u32`
//! format version, `u32` width, `u64` record count, then per record a `u64`
//! text hash followed by `width` little-endian `f64` values, and a trailing
//! CRC-32 of everything before it.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lru::LruCache;

use patsnd_core::encoder::text_hash;
use patsnd_core::{Error, Result, TextEncoder};

use crate::atomic::write_bytes;
use crate::error::{IoError, IoResult};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"PATSNDEM";
pub const EMBEDDING_VERSION: u32 = 1;
pub const DEFAULT_CACHE_CAPACITY: usize = 1_000_000;
/// Directory for persisted embeddings.
pub const CACHE_DIR_ENV: &str = "PAT_SND_CACHE_DIR";

/// Embedding vectors keyed by [`text_hash`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub vectors: HashMap<u64, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn get(&self, text: &str) -> Option<&[f64]> {
        self.vectors.get(&text_hash(text)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) {
        self.vectors.insert(text_hash(text), vector);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut keys: Vec<&u64> = self.vectors.keys().collect();
        keys.sort();
        let mut out = Vec::with_capacity(24 + keys.len() * (8 + 8 * self.dim) + 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(keys.len() as u64).to_le_bytes());
        for key in keys {
            out.extend_from_slice(&key.to_le_bytes());
            for x in &self.vectors[key] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> IoResult<Self> {
        let mut r = crate::checkpoint::Reader::open(path, bytes, EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut vectors = HashMap::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let key = r.u64()?;
            vectors.insert(key, r.f64s(dim)?);
        }
        r.finish()?;
        Ok(Self { dim, vectors })
    }

    pub fn load(path: &Path) -> IoResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }

    pub fn save(&self, path: &Path) -> IoResult<()> {
        write_bytes(path, &self.to_bytes())
    }
}

/// Encoder backed by embeddings computed ahead of time, for example with a
/// pretrained transformer. Unknown text is an error.
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder {
    store: EmbeddingStore,
}

impl PrecomputedEncoder {
    pub fn new(store: EmbeddingStore) -> Self {
        Self { store }
    }

    pub fn load(path: &Path) -> IoResult<Self> {
        Ok(Self::new(EmbeddingStore::load(path)?))
    }

    pub fn len(&self) -> usize {
        self.store.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.vectors.is_empty()
    }
}

impl TextEncoder for PrecomputedEncoder {
    fn dim(&self) -> usize {
        self.store.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        self.store
            .get(text)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::InvalidInput(format!("no precomputed embedding for `{text}`")))
    }
}

/// LRU cache in front of any encoder, safe to share between threads.
/// Entries loaded from a persisted file back up the in-memory cache.
pub struct CachedEncoder<E> {
    inner: E,
    persisted: EmbeddingStore,
    lru: Mutex<LruCache<String, Arc<Vec<f64>>>>,
}

impl<E: TextEncoder> CachedEncoder<E> {
    pub fn new(inner: E) -> Self {
        Self::with_capacity(inner, DEFAULT_CACHE_CAPACITY)
    }

    pub fn with_capacity(inner: E, capacity: usize) -> Self {
        let dim = inner.dim();
        Self {
            inner,
            persisted: EmbeddingStore::new(dim),
            lru: Mutex::new(LruCache::new(NonZeroUsize::new(capacity.max(1)).unwrap())),
        }
    }

    /// Adds previously saved entries. The file's width must match.
    pub fn preload(&mut self, path: &Path) -> IoResult<()> {
        let store = EmbeddingStore::load(path)?;
        if store.dim != self.inner.dim() {
            return Err(IoError::corrupt(
                path,
                format!("embedding width {} does not match encoder width {}", store.dim, self.inner.dim()),
            ));
        }
        self.persisted.vectors.extend(store.vectors);
        Ok(())
    }

    /// Writes every cached and preloaded vector.
    pub fn save(&self, path: &Path) -> IoResult<()> {
        let mut store = self.persisted.clone();
        let lru = self.lru.lock().unwrap();
        for (text, v) in lru.iter() {
            store.insert(text, v.as_ref().clone());
        }
        drop(lru);
        store.save(path)
    }

    pub fn len(&self) -> usize {
        self.lru.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: TextEncoder> TextEncoder for CachedEncoder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.lru.lock().unwrap().get(text) {
            return Ok(v.as_ref().clone());
        }
        let v = match self.persisted.get(text) {
            Some(v) => v.to_vec(),
            None => self.inner.encode(text)?,
        };
        self.lru
            .lock()
            .unwrap()
            .put(text.to_string(), Arc::new(v.clone()));
        Ok(v)
    }
}

/// `$PAT_SND_CACHE_DIR`, if set.
pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use patsnd_core::HashedTrigramEncoder;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: HashedTrigramEncoder,
        calls: AtomicUsize,
    }

    impl TextEncoder for Counting {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn encode(&self, text: &str) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.encode(text)
        }
    }

    fn counting() -> Counting {
        Counting {
            inner: HashedTrigramEncoder::new(16, 3),
            calls: AtomicUsize::new(0),
        }
    }

    #[test]
    fn hit_is_bit_identical_and_skips_encoder() {
        let enc = CachedEncoder::new(counting());
        let a = enc.encode("instance of").unwrap();
        let b = enc.encode("instance of").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, HashedTrigramEncoder::new(16, 3).encode("instance of").unwrap());
        assert_eq!(enc.inner().calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn lru_eviction() {
        let enc = CachedEncoder::with_capacity(counting(), 2);
        for t in ["a b", "c d", "e f", "a b"] {
            enc.encode(t).unwrap();
        }
        assert_eq!(enc.len(), 2);
        assert_eq!(enc.inner().calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn concurrent_use() {
        let enc = CachedEncoder::new(counting());
        std::thread::scope(|s| {
            for t in 0..4 {
                let enc = &enc;
                s.spawn(move || {
                    for i in 0..50 {
                        let text = format!("text {}", (i + t) % 10);
                        assert_eq!(enc.encode(&text).unwrap(), enc.inner().inner.encode(&text).unwrap());
                    }
                });
            }
        });
        assert_eq!(enc.len(), 10);
    }

    #[test]
    fn persisted_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.emb");
        let enc = CachedEncoder::new(counting());
        let v = enc.encode("chess variant").unwrap();
        enc.save(&path).unwrap();

        let mut fresh = CachedEncoder::new(counting());
        fresh.preload(&path).unwrap();
        assert_eq!(fresh.encode("chess variant").unwrap(), v);
        assert_eq!(fresh.inner().calls.load(Ordering::SeqCst), 0);

        let pre = PrecomputedEncoder::load(&path).unwrap();
        assert_eq!(pre.encode("chess variant").unwrap(), v);
        assert!(pre.encode("politician").is_err());

        let mut narrow = CachedEncoder::new(HashedTrigramEncoder::new(8, 3));
        assert!(narrow.preload(&path).is_err());
    }

    #[test]
    fn corrupt_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.emb");
        let mut store = EmbeddingStore::new(2);
        store.insert("x", vec![1.0, 2.0]);
        let mut bytes = store.to_bytes();
        bytes[30] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(EmbeddingStore::load(&path), Err(IoError::Corrupt { .. })));
        let mut bytes = store.to_bytes();
        bytes[8] = 9;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            EmbeddingStore::load(&path),
            Err(IoError::IncompatibleCheckpoint { found: 9, .. })
        ));
    }
}
