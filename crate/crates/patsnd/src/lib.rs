//! File formats, persistence and the `pat-snd` command line on top of
//! `patsnd-core`.

pub mod atomic;
pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod encoders;
pub mod error;
pub mod formats;
pub mod xml;

pub use cache::{CachedEncoder, EmbeddingStore, PrecomputedEncoder};
pub use checkpoint::{Checkpoint, ClassifierCheckpoint};
pub use encoders::{EncoderKind, EncoderSpec, LoadedEncoder};
pub use error::{IoError, IoResult};
