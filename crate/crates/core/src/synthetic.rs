//! Seeded synthetic benchmark with a known cause of novelty.
//!
//! Entities belong to one of eight types, recorded only through their
//! `P31` ("instance of") property. Every other property, and every
//! description, is drawn from pools shared by all types. Each relation
//! admits one (head type, tail type) combination: NORMAL triples respect it
//! and NOVEL test triples break it on exactly one side, so the type-bearing
//! property is the annotated novelty cause. Sentences are built from
//! relation-specific templates, which makes the relation recoverable from
//! the text alone.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::contrastive::{Triple, TripleKey};
use crate::dsbuild::{FactInstance, InstanceLabel, Mention, Span};
use crate::evaluation::KeyPropertyAnnotation;
use crate::kb::{EntityRecord, KnowledgeBase, RelationDef, SourceProperty};
use crate::{Error, Result};

/// Property carrying the entity type.
pub const TYPE_PROPERTY: &str = "P31";
pub const TYPE_PROPERTY_LABEL: &str = "instance of";

pub const ENTITY_TYPES: [&str; 8] = [
    "film",
    "building",
    "musical instrument",
    "award",
    "city",
    "political party",
    "sport",
    "human",
];

/// `(relation id, label, description, head type, tail type, templates)`.
/// Templates put `{1}` and `{2}` where the head and tail labels go.
type RelationSpec = (&'static str, &'static str, &'static str, &'static str, &'static str, [&'static str; 2]);

const RELATIONS: [RelationSpec; 7] = [
    (
        "P161",
        "cast member",
        "actor in the subject production",
        "film",
        "human",
        ["{2} starred in {1}.", "The cast of {1} included {2}."],
    ),
    (
        "P84",
        "architect",
        "person or architectural firm responsible for designing this building",
        "building",
        "human",
        ["{1} was designed by the architect {2}.", "{2} drew up the plans for {1}."],
    ),
    (
        "P1303",
        "instrument",
        "musical instrument that a person plays",
        "human",
        "musical instrument",
        ["{1} plays the {2}.", "On stage {1} performed on the {2}."],
    ),
    (
        "P1346",
        "winner",
        "winner of a competition or similar event",
        "award",
        "human",
        ["The {1} was won by {2}.", "{2} received the {1} last spring."],
    ),
    (
        "P6",
        "head of government",
        "head of the executive power of this town, city or municipality",
        "city",
        "human",
        ["{2} was elected mayor of {1}.", "The city council of {1} is led by {2}."],
    ),
    (
        "P463",
        "member of",
        "organization of which the subject is a member",
        "human",
        "political party",
        ["{1} joined the {2}.", "{1} holds a membership card of the {2}."],
    ),
    (
        "P641",
        "sport",
        "sport that the subject participates in",
        "human",
        "sport",
        ["{1} competes professionally in {2}.", "{1} trained for years to play {2}."],
    ),
];

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mir", "tan", "be", "su", "vor", "ri", "del", "na", "osk", "pe", "lu", "zan",
    "ti", "gor", "ma", "fen", "ul", "dra", "sel", "bo", "ny", "cas",
];

const DESCRIPTIONS: [&str; 8] = [
    "entry in a regional reference catalogue",
    "item first recorded in the 2019 survey",
    "subject of several newspaper articles",
    "topic covered by a local history society",
    "item listed in a public heritage register",
    "entry created from an archival collection",
    "subject mentioned in a travel guide",
    "item documented by volunteer editors",
];

const COUNTRIES: [&str; 8] = [
    "Norway", "Chile", "Kenya", "Japan", "Portugal", "Canada", "Vietnam", "Austria",
];

const SOURCES: [&str; 5] = [
    "Regional Almanac",
    "National Gazetteer",
    "Great Encyclopedia",
    "Annual Register",
    "City Archive Bulletin",
];

const DISTRACTORS: [(&str, &str); 8] = [
    ("P17", "country"),
    ("P571", "inception"),
    ("P856", "official website"),
    ("P1343", "described by source"),
    ("P373", "Commons category"),
    ("P18", "image"),
    ("P495", "country of origin"),
    ("P1448", "official name"),
];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SyntheticConfig {
    pub seed: u64,
    pub entities_per_type: usize,
    pub distractors_per_entity: usize,
    pub train_normal: usize,
    pub test_normal: usize,
    pub test_novel: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            entities_per_type: 30,
            distractors_per_entity: 5,
            train_normal: 2000,
            test_normal: 200,
            test_novel: 200,
        }
    }
}

/// Everything needed to train and evaluate on the synthetic task.
#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub kb: KnowledgeBase,
    /// Entity type by entity id.
    pub entity_types: BTreeMap<String, String>,
    pub train: Vec<FactInstance>,
    /// NORMAL and NOVEL instances, shuffled.
    pub test: Vec<FactInstance>,
    /// Key properties of every NOVEL test instance.
    pub annotations: Vec<KeyPropertyAnnotation>,
}

impl SyntheticBenchmark {
    pub fn train_triples(&self) -> Vec<Triple> {
        self.train.iter().map(FactInstance::triple).collect()
    }

    pub fn relation_ids(&self) -> Vec<String> {
        self.kb.relations().iter().map(|r| r.relation_id.clone()).collect()
    }
}

/// `(head type, tail type)` admitted by `relation_id`.
pub fn compatible_types(relation_id: &str) -> Option<(&'static str, &'static str)> {
    RELATIONS
        .iter()
        .find(|r| r.0 == relation_id)
        .map(|r| (r.3, r.4))
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn name<R: Rng + ?Sized>(rng: &mut R, syllables: usize) -> String {
    (0..syllables)
        .map(|_| *SYLLABLES.choose(rng).unwrap())
        .collect()
}

fn distractor_value<R: Rng + ?Sized>(pid: &str, label: &str, rng: &mut R) -> String {
    match pid {
        "P17" | "P495" => COUNTRIES.choose(rng).unwrap().to_string(),
        "P571" => format!("{}", rng.gen_range(1850..2020)),
        "P856" => format!("https://www.{}.org", label.to_lowercase().replace(' ', "-")),
        "P1343" => SOURCES.choose(rng).unwrap().to_string(),
        "P373" => label.to_string(),
        "P18" => format!("{} {}.jpg", label, rng.gen_range(1..99)),
        _ => format!("{} {}", label, title_case(&name(rng, 2))),
    }
}

/// Renders a template and returns the text plus the char spans of both labels.
fn render(template: &str, head: &str, tail: &str) -> (String, Span, Span) {
    let mut text = String::new();
    let mut spans = [Span::new(0, 0); 2];
    let mut rest = template;
    while let Some(at) = rest.find('{') {
        text.push_str(&rest[..at]);
        let (which, label) = if rest[at..].starts_with("{1}") { (0, head) } else { (1, tail) };
        let start = text.chars().count();
        text.push_str(label);
        spans[which] = Span::new(start, start + label.chars().count());
        rest = &rest[at + 3..];
    }
    text.push_str(rest);
    (text, spans[0], spans[1])
}

fn instance<R: Rng + ?Sized>(
    id: String,
    key: &TripleKey,
    label: InstanceLabel,
    kb: &KnowledgeBase,
    rng: &mut R,
) -> Result<FactInstance> {
    let spec = RELATIONS.iter().find(|r| r.0 == key.1).unwrap();
    let template = spec.5.choose(rng).unwrap();
    let head = &kb.entity(&key.0).unwrap().label;
    let tail = &kb.entity(&key.2).unwrap().label;
    let (text, s1, s2) = render(template, head, tail);
    let inst = FactInstance {
        id: Some(id),
        text,
        e1: Mention::new(key.0.as_str(), s1),
        e2: Mention::new(key.2.as_str(), s2),
        relation_id: key.1.clone(),
        label,
    };
    inst.validate()?;
    Ok(inst)
}

/// Generates the benchmark deterministically from `config.seed`.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticBenchmark> {
    if config.entities_per_type < 2 || config.distractors_per_entity > DISTRACTORS.len() {
        return Err(Error::InvalidInput(format!(
            "need at least 2 entities per type and at most {} distractors",
            DISTRACTORS.len()
        )));
    }
    let mut rng = crate::seeded_rng(config.seed);
    let mut kb = KnowledgeBase::new();
    for spec in &RELATIONS {
        kb.add_relation(RelationDef::new(spec.0, spec.1, spec.2))?;
    }

    let mut by_type: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut entity_types = BTreeMap::new();
    let mut used_labels = BTreeSet::new();
    let mut next_id = 1000;
    for ty in ENTITY_TYPES {
        for _ in 0..config.entities_per_type {
            let label = loop {
                let candidate =
                    format!("{} {}", title_case(&name(&mut rng, 2)), title_case(&name(&mut rng, 3)));
                if used_labels.insert(candidate.clone()) {
                    break candidate;
                }
            };
            let mut props: Vec<SourceProperty> = DISTRACTORS
                .choose_multiple(&mut rng, config.distractors_per_entity)
                .map(|&(pid, plabel)| SourceProperty {
                    pid: pid.into(),
                    plabel: plabel.into(),
                    values: alloc::vec![distractor_value(pid, &label, &mut rng)],
                })
                .collect();
            props.push(SourceProperty {
                pid: TYPE_PROPERTY.into(),
                plabel: TYPE_PROPERTY_LABEL.into(),
                values: alloc::vec![ty.to_string()],
            });
            props.shuffle(&mut rng);
            let description = DESCRIPTIONS.choose(&mut rng).unwrap();
            let id = format!("Q{next_id}");
            next_id += 1;
            kb.insert_entity(EntityRecord::from_source(&*id, label, *description, &props)?)?;
            entity_types.insert(id.clone(), ty.to_string());
            by_type.entry(ty).or_default().push(id);
        }
    }

    // NORMAL triples: distinct, type-compatible.
    let wanted = config.train_normal + config.test_normal;
    let capacity: usize = RELATIONS
        .iter()
        .map(|r| {
            let (h, t) = (by_type[r.3].len(), by_type[r.4].len());
            if r.3 == r.4 { h * (t - 1) } else { h * t }
        })
        .sum();
    if wanted > capacity / 2 {
        return Err(Error::InvalidInput(format!(
            "{wanted} NORMAL triples requested but only {capacity} compatible pairs exist"
        )));
    }
    let mut seen = BTreeSet::new();
    let mut normals: Vec<TripleKey> = Vec::with_capacity(wanted);
    while normals.len() < wanted {
        let spec = RELATIONS.choose(&mut rng).unwrap();
        let h = by_type[spec.3].choose(&mut rng).unwrap();
        let t = by_type[spec.4].choose(&mut rng).unwrap();
        let key = (h.clone(), spec.0.to_string(), t.clone());
        if h != t && seen.insert(key.clone()) {
            normals.push(key);
        }
    }

    // NOVEL triples: one side of the wrong type.
    let mut novels: Vec<TripleKey> = Vec::with_capacity(config.test_novel);
    while novels.len() < config.test_novel {
        let spec = RELATIONS.choose(&mut rng).unwrap();
        let break_head = rng.gen_bool(0.5);
        let required = if break_head { spec.3 } else { spec.4 };
        let wrong: Vec<&str> = ENTITY_TYPES.iter().copied().filter(|t| *t != required).collect();
        let wrong_ty = wrong.choose(&mut rng).unwrap();
        let bad = by_type[wrong_ty].choose(&mut rng).unwrap();
        let (h, t) = if break_head {
            (bad, by_type[spec.4].choose(&mut rng).unwrap())
        } else {
            (by_type[spec.3].choose(&mut rng).unwrap(), bad)
        };
        let key = (h.clone(), spec.0.to_string(), t.clone());
        if h != t && seen.insert(key.clone()) {
            novels.push(key);
        }
    }

    let train = normals[..config.train_normal]
        .iter()
        .enumerate()
        .map(|(i, k)| instance(format!("train-{:04}", i + 1), k, InstanceLabel::Normal, &kb, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut labelled: Vec<(&TripleKey, InstanceLabel)> = normals[config.train_normal..]
        .iter()
        .map(|k| (k, InstanceLabel::Normal))
        .chain(novels.iter().map(|k| (k, InstanceLabel::Novel)))
        .collect();
    labelled.shuffle(&mut rng);
    let test = labelled
        .into_iter()
        .enumerate()
        .map(|(i, (k, label))| instance(format!("test-{:04}", i + 1), k, label, &kb, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let annotations = test
        .iter()
        .filter(|i| i.label == InstanceLabel::Novel)
        .map(|i| {
            let keys: BTreeSet<String> = [TYPE_PROPERTY.to_string()].into();
            KeyPropertyAnnotation {
                instance_id: i.id.clone().unwrap(),
                key_props_e1: keys.clone(),
                key_props_e2: keys,
            }
        })
        .collect();

    Ok(SyntheticBenchmark {
        kb,
        entity_types,
        train,
        test,
        annotations,
    })
}
