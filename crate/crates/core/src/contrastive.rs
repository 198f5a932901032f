//! Pseudo-novel triples by single-entity corruption.
//!
//! A normal triple `(e1, r, e2)` becomes `(e', r, e2)` or `(e1, r, e')` with
//! `e'` drawn uniformly from the knowledge base. Candidates that reproduce
//! a known normal triple are rejected and redrawn unless filtering is
//! disabled.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::kb::KnowledgeBase;
use crate::{Error, Result};

/// Draw limit for a single corruption.
pub const MAX_CORRUPTION_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "SCREAMING_SNAKE_CASE"))]
pub enum TripleLabel {
    Normal,
    PseudoNovel,
    Novel,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Triple {
    pub e1: String,
    pub relation_id: String,
    pub e2: String,
    pub label: TripleLabel,
}

/// `(e1, relation, e2)` without the label.
pub type TripleKey = (String, String, String);

impl Triple {
    pub fn new(
        e1: impl Into<String>,
        relation_id: impl Into<String>,
        e2: impl Into<String>,
        label: TripleLabel,
    ) -> Self {
        Self {
            e1: e1.into(),
            relation_id: relation_id.into(),
            e2: e2.into(),
            label,
        }
    }

    pub fn normal(e1: impl Into<String>, relation_id: impl Into<String>, e2: impl Into<String>) -> Self {
        Self::new(e1, relation_id, e2, TripleLabel::Normal)
    }

    pub fn key(&self) -> TripleKey {
        (self.e1.clone(), self.relation_id.clone(), self.e2.clone())
    }
}

/// Corruption sampler over one knowledge base and a set of known-normal
/// triples.
#[derive(Debug, Clone)]
pub struct ContrastiveGenerator<'a> {
    kb: &'a KnowledgeBase,
    known: BTreeSet<TripleKey>,
    filter_known: bool,
    max_attempts: usize,
}

impl<'a> ContrastiveGenerator<'a> {
    pub fn new<'t>(kb: &'a KnowledgeBase, known: impl IntoIterator<Item = &'t Triple>) -> Self {
        Self {
            kb,
            known: known.into_iter().map(Triple::key).collect(),
            filter_known: true,
            max_attempts: MAX_CORRUPTION_ATTEMPTS,
        }
    }

    /// Turns the known-triple collision filter on or off.
    pub fn with_filter(mut self, filter_known: bool) -> Self {
        self.filter_known = filter_known;
        self
    }

    pub fn with_max_attempts(mut self, max_attempts: usize) -> Self {
        self.max_attempts = max_attempts.max(1);
        self
    }

    fn is_known(&self, e1: &str, relation_id: &str, e2: &str) -> bool {
        self.filter_known
            && self
                .known
                .contains(&(e1.to_string(), relation_id.to_string(), e2.to_string()))
    }

    pub fn corrupt<R: Rng + ?Sized>(&self, triple: &Triple, rng: &mut R) -> Result<Triple> {
        if triple.label != TripleLabel::Normal {
            return Err(Error::InvalidInput(
                "only NORMAL triples can be corrupted".to_string(),
            ));
        }
        if triple.e1 == triple.e2 {
            return Err(Error::InvalidInput("triple has e1 == e2".to_string()));
        }
        if self.kb.len() < 3 {
            return Err(Error::InvalidInput(
                "corruption needs at least 3 entities".to_string(),
            ));
        }
        for _ in 0..self.max_attempts {
            let replace_head = rng.gen_bool(0.5);
            let candidate = self.kb.sample_entity(rng)?;
            if candidate == triple.e1 || candidate == triple.e2 {
                continue;
            }
            let (e1, e2) = if replace_head {
                (candidate, triple.e2.as_str())
            } else {
                (triple.e1.as_str(), candidate)
            };
            if self.is_known(e1, &triple.relation_id, e2) {
                continue;
            }
            return Ok(Triple::new(
                e1,
                triple.relation_id.as_str(),
                e2,
                TripleLabel::PseudoNovel,
            ));
        }
        Err(Error::CorruptionExhausted(self.max_attempts))
    }

    /// One fresh pseudo-novel triple per input, in input order.
    pub fn generate_epoch_negatives<R: Rng + ?Sized>(
        &self,
        triples: &[Triple],
        rng: &mut R,
    ) -> Result<Vec<Triple>> {
        triples.iter().map(|t| self.corrupt(t, rng)).collect()
    }
}

/// Corrupts `triple`, rejecting candidates found in `train_set`.
pub fn corrupt<R: Rng + ?Sized>(
    triple: &Triple,
    kb: &KnowledgeBase,
    train_set: &[Triple],
    rng: &mut R,
) -> Result<Triple> {
    ContrastiveGenerator::new(kb, train_set).corrupt(triple, rng)
}

/// One pseudo-novel triple per training triple.
pub fn generate_epoch_negatives<R: Rng + ?Sized>(
    train_triples: &[Triple],
    kb: &KnowledgeBase,
    rng: &mut R,
) -> Result<Vec<Triple>> {
    ContrastiveGenerator::new(kb, train_triples).generate_epoch_negatives(train_triples, rng)
}
