//! Entity background knowledge base and relation catalog.
//!
//! Each entity carries an ordered list of property-value pairs. Two
//! pseudo-pairs are always placed first: `label` and, when non-empty,
//! `description`. Multi-valued source properties are expanded into one
//! pair per value, in source order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

/// Reserved property id (and label) of the entity-label pseudo-pair.
pub const LABEL_PROPERTY: &str = "label";
/// Reserved property id (and label) of the description pseudo-pair.
pub const DESCRIPTION_PROPERTY: &str = "description";
/// Default bound on the number of pairs returned by [`KnowledgeBase::background`].
pub const DEFAULT_MAX_PROPERTIES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PropertyValuePair {
    pub property_id: String,
    pub property_label: String,
    pub value_text: String,
}

impl PropertyValuePair {
    pub fn new(
        property_id: impl Into<String>,
        property_label: impl Into<String>,
        value_text: impl Into<String>,
    ) -> Result<Self> {
        let pair = Self {
            property_id: property_id.into(),
            property_label: property_label.into(),
            value_text: value_text.into(),
        };
        if pair.property_label.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "property `{}` has an empty label",
                pair.property_id
            )));
        }
        if pair.value_text.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "property `{}` has an empty value",
                pair.property_id
            )));
        }
        Ok(pair)
    }

    /// True for the injected `label`/`description` pairs.
    pub fn is_pseudo(&self) -> bool {
        self.property_id == LABEL_PROPERTY || self.property_id == DESCRIPTION_PROPERTY
    }
}

/// A property as it appears in a source record, possibly list-valued.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SourceProperty {
    pub pid: String,
    pub plabel: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EntityRecord {
    pub entity_id: String,
    pub label: String,
    pub description: String,
    pub pairs: Vec<PropertyValuePair>,
}

impl EntityRecord {
    /// Builds a record from source data, injecting the pseudo-pairs and
    /// expanding list-valued properties.
    pub fn from_source(
        entity_id: impl Into<String>,
        label: impl Into<String>,
        description: impl Into<String>,
        properties: &[SourceProperty],
    ) -> Result<Self> {
        let entity_id = entity_id.into();
        let label = label.into();
        let description = description.into();
        if entity_id.is_empty() {
            return Err(Error::InvalidInput("empty entity id".to_string()));
        }

        let expanded: usize = properties.iter().map(|p| p.values.len()).sum();
        let mut pairs = Vec::with_capacity(expanded + 2);
        pairs.push(PropertyValuePair::new(LABEL_PROPERTY, LABEL_PROPERTY, label.clone())?);
        if !description.trim().is_empty() {
            pairs.push(PropertyValuePair::new(
                DESCRIPTION_PROPERTY,
                DESCRIPTION_PROPERTY,
                description.clone(),
            )?);
        }
        for prop in properties {
            if prop.pid == LABEL_PROPERTY || prop.pid == DESCRIPTION_PROPERTY {
                return Err(Error::InvalidInput(format!(
                    "property id `{}` is reserved",
                    prop.pid
                )));
            }
            for value in &prop.values {
                pairs.push(PropertyValuePair::new(&*prop.pid, &*prop.plabel, &**value)?);
            }
        }

        Ok(Self {
            entity_id,
            label,
            description,
            pairs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelationDef {
    pub relation_id: String,
    pub label: String,
    pub description: String,
}

impl RelationDef {
    pub fn new(
        relation_id: impl Into<String>,
        label: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self {
            relation_id: relation_id.into(),
            label: label.into(),
            description: description.into(),
        }
    }
}

/// Immutable-after-load store of entity records and relation definitions.
///
/// Entities keep their insertion order, which is what uniform sampling
/// indexes into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    records: Vec<EntityRecord>,
    index: BTreeMap<String, usize>,
    relations: Vec<RelationDef>,
    max_properties: usize,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        Self::new()
    }
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            index: BTreeMap::new(),
            relations: Vec::new(),
            max_properties: DEFAULT_MAX_PROPERTIES,
        }
    }

    /// Sets the truncation bound used by [`background`](Self::background).
    /// The bound is at least 2 so the pseudo-pairs always survive.
    pub fn with_max_properties(mut self, max_properties: usize) -> Self {
        self.max_properties = max_properties.max(2);
        self
    }

    pub fn max_properties(&self) -> usize {
        self.max_properties
    }

    pub fn insert_entity(&mut self, record: EntityRecord) -> Result<()> {
        if self.index.contains_key(&record.entity_id) {
            return Err(Error::DuplicateEntity(record.entity_id));
        }
        self.index.insert(record.entity_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn add_relation(&mut self, relation: RelationDef) -> Result<()> {
        if self.relation(&relation.relation_id).is_some() {
            return Err(Error::DuplicateRelation(relation.relation_id));
        }
        self.relations.push(relation);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn entity(&self, entity_id: &str) -> Option<&EntityRecord> {
        self.index.get(entity_id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, entity_id: &str) -> bool {
        self.index.contains_key(entity_id)
    }

    /// Records in insertion order.
    pub fn entities(&self) -> impl Iterator<Item = &EntityRecord> {
        self.records.iter()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.entity_id.as_str())
    }

    pub fn relations(&self) -> &[RelationDef] {
        &self.relations
    }

    pub fn relation(&self, relation_id: &str) -> Option<&RelationDef> {
        self.relations.iter().find(|r| r.relation_id == relation_id)
    }

    /// The background pair list of an entity, pseudo-pairs first, truncated
    /// to `max_properties`.
    pub fn background(&self, entity_id: &str) -> Result<&[PropertyValuePair]> {
        let record = self
            .entity(entity_id)
            .ok_or_else(|| Error::MissingEntity(entity_id.to_string()))?;
        let n = record.pairs.len().min(self.max_properties);
        Ok(&record.pairs[..n])
    }

    /// Draws an entity id uniformly at random.
    pub fn sample_entity<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&str> {
        if self.records.is_empty() {
            return Err(Error::EmptyKb);
        }
        let i = rng.gen_range(0..self.records.len());
        Ok(&self.records[i].entity_id)
    }

    /// Union of the property ids over all entities.
    pub fn property_universe(&self) -> BTreeSet<&str> {
        self.records
            .iter()
            .flat_map(|r| r.pairs.iter().map(|p| p.property_id.as_str()))
            .collect()
    }
}
