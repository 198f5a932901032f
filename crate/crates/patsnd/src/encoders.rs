//! Encoder selection shared by checkpoints and the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use patsnd_core::encoder::HashedTrigramEncoder;
use patsnd_core::TextEncoder;

use crate::cache::{cache_dir, CachedEncoder, PrecomputedEncoder, CACHE_DIR_ENV};
use crate::error::{IoError, IoResult};

/// File name of precomputed embeddings inside the cache directory.
pub const PRETRAINED_FILE: &str = "pretrained.emb";

/// Which encoder produced a model's features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// Hashed character-trigram encoder.
    Fallback { dim: usize, seed: u64 },
    /// Embeddings precomputed by an external model, looked up by text.
    Pretrained { dim: usize },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Fallback {
            dim: HashedTrigramEncoder::DEFAULT_DIM,
            seed: HashedTrigramEncoder::DEFAULT_SEED,
        }
    }
}

/// A ready-to-use encoder plus where its cache is persisted, if anywhere.
pub enum LoadedEncoder {
    Fallback {
        encoder: CachedEncoder<HashedTrigramEncoder>,
        cache_file: Option<PathBuf>,
    },
    Pretrained(PrecomputedEncoder),
}

impl LoadedEncoder {
    pub fn as_encoder(&self) -> &(dyn TextEncoder + Sync) {
        match self {
            LoadedEncoder::Fallback { encoder, .. } => encoder,
            LoadedEncoder::Pretrained(encoder) => encoder,
        }
    }

    /// Writes the fallback cache back to the cache directory.
    pub fn persist(&self) -> IoResult<()> {
        if let LoadedEncoder::Fallback {
            encoder,
            cache_file: Some(path),
        } = self
        {
            encoder.save(path)?;
        }
        Ok(())
    }
}

impl EncoderSpec {
    pub fn dim(&self) -> usize {
        match *self {
            EncoderSpec::Fallback { dim, .. } | EncoderSpec::Pretrained { dim } => dim,
        }
    }

    /// Builds the encoder. The fallback encoder reuses and refreshes a
    /// cache file under `cache_dir` when given; the pretrained encoder
    /// requires `cache_dir` to hold [`PRETRAINED_FILE`].
    pub fn load_in(&self, cache_dir: Option<&Path>) -> IoResult<LoadedEncoder> {
        match *self {
            EncoderSpec::Fallback { dim, seed } => {
                let mut encoder = CachedEncoder::new(HashedTrigramEncoder::new(dim, seed));
                let cache_file = cache_dir.map(|d| d.join(format!("fallback-{dim}-{seed:x}.emb")));
                if let Some(path) = cache_file.as_deref().filter(|p| p.exists()) {
                    encoder.preload(path)?;
                }
                Ok(LoadedEncoder::Fallback { encoder, cache_file })
            }
            EncoderSpec::Pretrained { dim } => {
                let dir = cache_dir.ok_or_else(|| {
                    IoError::Config(format!(
                        "set {CACHE_DIR_ENV} to the directory holding {PRETRAINED_FILE}"
                    ))
                })?;
                let encoder = PrecomputedEncoder::load(&dir.join(PRETRAINED_FILE))?;
                if encoder.dim() != dim {
                    return Err(IoError::corrupt(
                        dir.join(PRETRAINED_FILE),
                        format!("embedding width {} but {dim} expected", encoder.dim()),
                    ));
                }
                Ok(LoadedEncoder::Pretrained(encoder))
            }
        }
    }

    /// [`EncoderSpec::load_in`] with the directory from the environment.
    pub fn load(&self) -> IoResult<LoadedEncoder> {
        self.load_in(cache_dir().as_deref())
    }

    /// Spec for a freshly chosen encoder kind. The pretrained width is read
    /// from the embedding file.
    pub fn for_kind(kind: EncoderKind) -> IoResult<Self> {
        Ok(match kind {
            EncoderKind::Fallback => EncoderSpec::default(),
            EncoderKind::Pretrained => {
                let dir = cache_dir().ok_or_else(|| {
                    IoError::Config(format!("{CACHE_DIR_ENV} is not set"))
                })?;
                let enc = PrecomputedEncoder::load(&dir.join(PRETRAINED_FILE))?;
                EncoderSpec::Pretrained { dim: enc.dim() }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EncoderKind {
    Fallback,
    Pretrained,
}
