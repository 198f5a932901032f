//! Distant-supervision dataset construction.
//!
//! [`align`] turns entity-linked sentences into labelled instances using a
//! set of known triples; [`split`] partitions instances so that no text and
//! no unordered entity pair is shared between the two parts.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::contrastive::{Triple, TripleKey, TripleLabel};
use crate::{Error, Result};

/// Half-open `[start, end)` range of character (not byte) offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Fails unless `start < end <= text_len` (in characters).
    pub fn check(&self, text_len: usize) -> Result<()> {
        if self.start >= self.end || self.end > text_len {
            return Err(Error::Span {
                start: self.start,
                end: self.end,
                len: text_len,
            });
        }
        Ok(())
    }

    /// Byte range of this span within `text`.
    pub fn byte_range(&self, text: &str) -> Result<core::ops::Range<usize>> {
        let len = text.chars().count();
        self.check(len)?;
        let mut offsets = text.char_indices().map(|(b, _)| b).chain(core::iter::once(text.len()));
        let start = offsets.nth(self.start).unwrap_or(text.len());
        let end = if self.end == self.start {
            start
        } else {
            offsets.nth(self.end - self.start - 1).unwrap_or(text.len())
        };
        Ok(start..end)
    }

    pub fn slice<'t>(&self, text: &'t str) -> Result<&'t str> {
        Ok(&text[self.byte_range(text)?])
    }
}

/// Character span of the first occurrence of `needle` in `text`.
pub fn find_span(text: &str, needle: &str) -> Option<Span> {
    let byte = text.find(needle)?;
    let start = text[..byte].chars().count();
    Some(Span::new(start, start + needle.chars().count()))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mention {
    pub entity_id: String,
    pub span: Span,
}

impl Mention {
    pub fn new(entity_id: impl Into<String>, span: Span) -> Self {
        Self {
            entity_id: entity_id.into(),
            span,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusSentence {
    pub text: String,
    pub mentions: Vec<Mention>,
}

impl CorpusSentence {
    pub fn validate(&self) -> Result<()> {
        let len = self.text.chars().count();
        for (i, m) in self.mentions.iter().enumerate() {
            m.span.check(len)?;
            if let Some(other) = self.mentions[..i].iter().find(|o| o.span.overlaps(&m.span)) {
                return Err(Error::InvalidInput(format!(
                    "mentions of `{}` and `{}` overlap",
                    other.entity_id, m.entity_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "SCREAMING_SNAKE_CASE"))]
pub enum InstanceLabel {
    Normal,
    Novel,
}

impl From<InstanceLabel> for TripleLabel {
    fn from(label: InstanceLabel) -> Self {
        match label {
            InstanceLabel::Normal => TripleLabel::Normal,
            InstanceLabel::Novel => TripleLabel::Novel,
        }
    }
}

/// A labelled factual text about an entity pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactInstance {
    /// Optional stable identifier; annotation files refer to it.
    pub id: Option<String>,
    pub text: String,
    pub e1: Mention,
    pub e2: Mention,
    pub relation_id: String,
    pub label: InstanceLabel,
}

impl FactInstance {
    pub fn triple(&self) -> Triple {
        Triple::new(
            self.e1.entity_id.as_str(),
            self.relation_id.as_str(),
            self.e2.entity_id.as_str(),
            self.label.into(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.e1.entity_id == self.e2.entity_id {
            return Err(Error::InvalidInput(format!(
                "instance mentions `{}` twice",
                self.e1.entity_id
            )));
        }
        let len = self.text.chars().count();
        self.e1.span.check(len)?;
        self.e2.span.check(len)?;
        if self.e1.span.overlaps(&self.e2.span) {
            return Err(Error::InvalidInput("entity spans overlap".to_string()));
        }
        Ok(())
    }
}

/// Labels every entity pair of every sentence that has exactly one attested
/// triple (in either direction) as a NORMAL instance. Pairs with several
/// attested triples are ambiguous and dropped. When an entity is mentioned
/// more than once, its first mention is used.
pub fn align(corpus: &[CorpusSentence], kr_triples: &[TripleKey]) -> Result<Vec<FactInstance>> {
    let mut by_pair: BTreeMap<(&str, &str), BTreeSet<&str>> = BTreeMap::new();
    for (e1, r, e2) in kr_triples {
        by_pair.entry((e1, e2)).or_default().insert(r);
    }

    let mut out = Vec::new();
    for sentence in corpus {
        sentence.validate()?;
        let mut seen = BTreeSet::new();
        let mentions: Vec<&Mention> = sentence
            .mentions
            .iter()
            .filter(|m| seen.insert(m.entity_id.as_str()))
            .collect();
        for (i, a) in mentions.iter().enumerate() {
            for b in &mentions[i + 1..] {
                let forward = by_pair.get(&(a.entity_id.as_str(), b.entity_id.as_str()));
                let backward = by_pair.get(&(b.entity_id.as_str(), a.entity_id.as_str()));
                let count = forward.map_or(0, BTreeSet::len) + backward.map_or(0, BTreeSet::len);
                if count != 1 {
                    continue;
                }
                // Exactly one attested triple: it sits in whichever direction
                // has a non-empty relation set.
                let (head, tail, relations) = match (forward, backward) {
                    (Some(rs), _) => (*a, *b, rs),
                    (None, Some(rs)) => (*b, *a, rs),
                    (None, None) => continue,
                };
                let Some(relation) = relations.iter().next() else { continue };
                out.push(FactInstance {
                    id: None,
                    text: sentence.text.clone(),
                    e1: head.clone(),
                    e2: tail.clone(),
                    relation_id: relation.to_string(),
                    label: InstanceLabel::Normal,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub train: Vec<FactInstance>,
    pub test_pool: Vec<FactInstance>,
    /// `|test_pool| / n`, or 0 for empty input.
    pub achieved_fraction: f64,
    /// Set when the component structure prevented hitting the target size.
    pub warning: Option<String>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Splits instances into a training part and a test pool of roughly
/// `test_pool_fraction` of the data.
///
/// Instances connected by a shared text or a shared unordered entity pair
/// always land in the same part. Components are visited in seeded random
/// order and added to the pool while they fit the target size. Each part
/// keeps input order.
pub fn split<R: Rng + ?Sized>(
    instances: &[FactInstance],
    rng: &mut R,
    test_pool_fraction: f64,
) -> Result<SplitOutcome> {
    if !(test_pool_fraction > 0.0 && test_pool_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test pool fraction {test_pool_fraction} is not in (0, 1)"
        )));
    }
    let n = instances.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut by_text: BTreeMap<&str, usize> = BTreeMap::new();
    let mut by_pair: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        if let Some(&j) = by_text.get(inst.text.as_str()) {
            union(&mut parent, i, j);
        } else {
            by_text.insert(&inst.text, i);
        }
        let key = unordered(&inst.e1.entity_id, &inst.e2.entity_id);
        if let Some(&j) = by_pair.get(&key) {
            union(&mut parent, i, j);
        } else {
            by_pair.insert(key, i);
        }
    }

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        members.entry(root).or_default().push(i);
    }
    let mut components: Vec<Vec<usize>> = members.into_values().collect();
    components.shuffle(rng);

    let target = libm::round(test_pool_fraction * n as f64) as usize;
    let mut in_pool = alloc::vec![false; n];
    let mut pool_size = 0;
    for comp in &components {
        if pool_size + comp.len() <= target {
            pool_size += comp.len();
            for &i in comp {
                in_pool[i] = true;
            }
        }
    }

    let (mut train, mut test_pool) = (Vec::new(), Vec::new());
    for (inst, pooled) in instances.iter().zip(&in_pool) {
        if *pooled {
            test_pool.push(inst.clone());
        } else {
            train.push(inst.clone());
        }
    }
    let achieved_fraction = if n == 0 { 0.0 } else { pool_size as f64 / n as f64 };
    let warning = (pool_size != target).then(|| {
        format!(
            "test pool holds {pool_size} of {n} instances (target {target}); \
             the largest connected component has {} instances",
            components.iter().map(Vec::len).max().unwrap_or(0)
        )
    });
    Ok(SplitOutcome {
        train,
        test_pool,
        achieved_fraction,
        warning,
    })
}
