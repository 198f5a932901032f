//! Knowledge-grounded semantic novelty detection.
//!
//! A factual sentence about an entity pair is reduced to a triple
//! `(e1, r, e2)`. Each entity's background knowledge (a list of
//! property-value pairs) is summarised by a relation-specific multi-head
//! property attention network, and the two summaries are scored by a
//! relation-specific linear layer. Training uses only normal triples plus
//! pseudo-novel triples obtained by corrupting one entity, under a
//! max-margin ranking objective.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, checkpoints,
//! caching and the command line live in the `patsnd` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod contrastive;
pub mod dsbuild;
pub mod encoder;
mod error;
pub mod evaluation;
pub mod kb;
mod linalg;
pub mod pat;
pub mod relclf;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};

pub use contrastive::{Triple, TripleLabel};
pub use dsbuild::{CorpusSentence, FactInstance, InstanceLabel, Mention, Span};
pub use encoder::{HashedTrigramEncoder, Projection, TextEncoder};
pub use evaluation::{EvalResult, KeyPropertyAnnotation};
pub use kb::{EntityRecord, KnowledgeBase, PropertyValuePair, RelationDef};
pub use pat::{AttentionReport, PatParams, RelationParams, SnsModel};
pub use relclf::{ClassifierModel, RelationPrediction, RelationSource};
pub use training::TrainConfig;

/// Seeded generator used for every randomized operation.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's seeded generator.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
