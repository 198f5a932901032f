//! On-disk formats: JSON Lines datasets and knowledge bases, the flat
//! training config, logs and evaluation outputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use patsnd_core::contrastive::TripleKey;
use patsnd_core::kb::{SourceProperty, DEFAULT_MAX_PROPERTIES};
use patsnd_core::pat::EntityAttention;
use patsnd_core::training::EpochRecord;
use patsnd_core::{
    AttentionReport, CorpusSentence, EntityRecord, EvalResult, FactInstance, InstanceLabel,
    KeyPropertyAnnotation, KnowledgeBase, Mention, RelationDef, Span, TrainConfig,
};

use crate::atomic::write_atomic;
use crate::error::{IoError, IoResult};

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> IoResult<Vec<T>> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::parse(path, n + 1, e))?);
    }
    Ok(out)
}

/// Writes one JSON value per line, atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> IoResult<()> {
    write_atomic(path, |out| {
        for item in items {
            serde_json::to_writer(&mut *out, item).map_err(|e| IoError::corrupt(path, e))?;
            out.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
        }
        Ok(())
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    write_atomic(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value).map_err(|e| IoError::corrupt(path, e))?;
        out.write_all(b"\n").map_err(|e| IoError::io(path, e))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbLine {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub properties: Vec<SourceProperty>,
}

impl KbLine {
    pub fn into_record(self) -> patsnd_core::Result<EntityRecord> {
        EntityRecord::from_source(self.id, self.label, self.description, &self.properties)
    }

    /// Inverse of [`KbLine::into_record`]: drops the pseudo-pairs and folds
    /// consecutive pairs of one property back into a list.
    pub fn from_record(record: &EntityRecord) -> Self {
        let mut properties: Vec<SourceProperty> = Vec::new();
        for pair in record.pairs.iter().filter(|p| !p.is_pseudo()) {
            match properties.last_mut() {
                Some(last) if last.pid == pair.property_id && last.plabel == pair.property_label => {
                    last.values.push(pair.value_text.clone())
                }
                _ => properties.push(SourceProperty {
                    pid: pair.property_id.clone(),
                    plabel: pair.property_label.clone(),
                    values: vec![pair.value_text.clone()],
                }),
            }
        }
        Self {
            id: record.entity_id.clone(),
            label: record.label.clone(),
            description: record.description.clone(),
            properties,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationLine {
    pub rid: String,
    pub label: String,
    #[serde(default)]
    pub description: String,
}

/// Loads a knowledge base and, optionally, its relation catalog.
pub fn read_kb(path: &Path, relations: Option<&Path>) -> IoResult<KnowledgeBase> {
    read_kb_with_limit(path, relations, DEFAULT_MAX_PROPERTIES)
}

pub fn read_kb_with_limit(
    path: &Path,
    relations: Option<&Path>,
    max_properties: usize,
) -> IoResult<KnowledgeBase> {
    let mut kb = KnowledgeBase::new().with_max_properties(max_properties);
    for (n, line) in read_jsonl::<KbLine>(path)?.into_iter().enumerate() {
        let record = line.into_record().map_err(|e| IoError::parse(path, n + 1, e))?;
        kb.insert_entity(record).map_err(|e| IoError::parse(path, n + 1, e))?;
    }
    if let Some(rpath) = relations {
        for line in read_relations(rpath)? {
            kb.add_relation(line).map_err(|e| IoError::data(rpath, e))?;
        }
    }
    Ok(kb)
}

pub fn read_relations(path: &Path) -> IoResult<Vec<RelationDef>> {
    Ok(read_jsonl::<RelationLine>(path)?
        .into_iter()
        .map(|r| RelationDef::new(r.rid, r.label, r.description))
        .collect())
}

pub fn write_kb(path: &Path, kb: &KnowledgeBase) -> IoResult<()> {
    let lines: Vec<KbLine> = kb.entities().map(KbLine::from_record).collect();
    write_jsonl(path, &lines)
}

pub fn write_relations(path: &Path, relations: &[RelationDef]) -> IoResult<()> {
    let lines: Vec<RelationLine> = relations
        .iter()
        .map(|r| RelationLine {
            rid: r.relation_id.clone(),
            label: r.label.clone(),
            description: r.description.clone(),
        })
        .collect();
    write_jsonl(path, &lines)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionLine {
    pub id: String,
    pub start: usize,
    pub end: usize,
}

impl From<&Mention> for MentionLine {
    fn from(m: &Mention) -> Self {
        Self {
            id: m.entity_id.clone(),
            start: m.span.start,
            end: m.span.end,
        }
    }
}

impl From<MentionLine> for Mention {
    fn from(m: MentionLine) -> Self {
        Mention::new(m.id, Span::new(m.start, m.end))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusLine {
    pub text: String,
    pub mentions: Vec<MentionLine>,
}

pub fn read_corpus(path: &Path) -> IoResult<Vec<CorpusSentence>> {
    read_jsonl::<CorpusLine>(path)?
        .into_iter()
        .enumerate()
        .map(|(n, line)| {
            let sentence = CorpusSentence {
                text: line.text,
                mentions: line.mentions.into_iter().map(Mention::from).collect(),
            };
            sentence.validate().map_err(|e| IoError::parse(path, n + 1, e))?;
            Ok(sentence)
        })
        .collect()
}

/// The canonical dataset record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub e1: MentionLine,
    pub e2: MentionLine,
    /// Gold relation; may be empty when a classifier supplies it.
    #[serde(default)]
    pub relation: String,
    pub label: InstanceLabel,
}

impl From<&FactInstance> for InstanceLine {
    fn from(i: &FactInstance) -> Self {
        Self {
            id: i.id.clone(),
            text: i.text.clone(),
            e1: (&i.e1).into(),
            e2: (&i.e2).into(),
            relation: i.relation_id.clone(),
            label: i.label,
        }
    }
}

impl From<InstanceLine> for FactInstance {
    fn from(l: InstanceLine) -> Self {
        FactInstance {
            id: l.id,
            text: l.text,
            e1: l.e1.into(),
            e2: l.e2.into(),
            relation_id: l.relation,
            label: l.label,
        }
    }
}

pub fn read_instances(path: &Path) -> IoResult<Vec<FactInstance>> {
    read_jsonl::<InstanceLine>(path)?
        .into_iter()
        .enumerate()
        .map(|(n, line)| {
            let inst = FactInstance::from(line);
            inst.validate().map_err(|e| IoError::parse(path, n + 1, e))?;
            Ok(inst)
        })
        .collect()
}

pub fn write_instances(path: &Path, instances: &[FactInstance]) -> IoResult<()> {
    let lines: Vec<InstanceLine> = instances.iter().map(InstanceLine::from).collect();
    write_jsonl(path, &lines)
}

pub fn read_annotations(path: &Path) -> IoResult<Vec<KeyPropertyAnnotation>> {
    let anns: Vec<KeyPropertyAnnotation> = read_jsonl(path)?;
    for (n, a) in anns.iter().enumerate() {
        if a.key_props_e1.is_empty() && a.key_props_e2.is_empty() {
            return Err(IoError::parse(path, n + 1, "annotation without key properties"));
        }
    }
    Ok(anns)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrTripleLine {
    pub e1: String,
    pub relation: String,
    pub e2: String,
}

pub fn read_kr_triples(path: &Path) -> IoResult<Vec<TripleKey>> {
    Ok(read_jsonl::<KrTripleLine>(path)?
        .into_iter()
        .map(|t| (t.e1, t.relation, t.e2))
        .collect())
}

/// Reads a flat `key = value` config with the [`TrainConfig`] field names.
/// Missing keys keep their defaults; unknown keys are rejected.
pub fn read_train_config(path: &Path) -> IoResult<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let config: TrainConfig = toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start].matches('\n').count() + 1)
            .unwrap_or(0);
        IoError::parse(path, line, e.message())
    })?;
    config.validate().map_err(|e| IoError::data(path, e))?;
    Ok(config)
}

pub fn write_train_config(path: &Path, config: &TrainConfig) -> IoResult<()> {
    let text = toml::to_string(config).map_err(|e| IoError::corrupt(path, e))?;
    crate::atomic::write_bytes(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLine {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

pub fn write_train_log(path: &Path, log: &[EpochRecord]) -> IoResult<()> {
    let lines: Vec<EpochLine> = log
        .iter()
        .map(|r| EpochLine {
            epoch: r.epoch,
            mean_loss: r.mean_loss,
            wall_seconds: r.wall_seconds,
        })
        .collect();
    write_jsonl(path, &lines)
}

/// Score output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub e1: String,
    pub relation: String,
    pub e2: String,
    pub novelty_score: f64,
    pub label: InstanceLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub auc: f64,
    /// NCS by Top-N, keys as strings.
    pub ncs: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ncs_random: BTreeMap<String, f64>,
    pub n_normal: usize,
    pub n_novel: usize,
    pub seed: u64,
}

impl EvalSummary {
    pub fn new(result: &EvalResult, random: &BTreeMap<usize, f64>, seed: u64) -> Self {
        let keyed = |m: &BTreeMap<usize, f64>| m.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self {
            auc: result.auc,
            ncs: keyed(&result.ncs),
            ncs_random: keyed(random),
            n_normal: result.n_normal,
            n_novel: result.n_novel,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLine {
    pub rank: usize,
    pub pid: String,
    pub plabel: String,
    pub value: String,
    /// Attention weight in percent.
    pub weight_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityAttentionLine {
    pub id: String,
    pub properties: Vec<RankedLine>,
}

impl From<&EntityAttention> for EntityAttentionLine {
    fn from(a: &EntityAttention) -> Self {
        Self {
            id: a.entity_id.clone(),
            properties: a
                .ranked
                .iter()
                .map(|r| RankedLine {
                    rank: r.rank,
                    pid: r.pair.property_id.clone(),
                    plabel: r.pair.property_label.clone(),
                    value: r.pair.value_text.clone(),
                    weight_pct: r.weight * 100.0,
                })
                .collect(),
        }
    }
}

/// Attention report record, one per explained instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub relation: String,
    pub novelty_score: f64,
    pub e1: EntityAttentionLine,
    pub e2: EntityAttentionLine,
}

impl ReportLine {
    pub fn new(id: Option<String>, report: &AttentionReport) -> Self {
        Self {
            id,
            relation: report.relation_id.clone(),
            novelty_score: report.novelty_score,
            e1: (&report.e1).into(),
            e2: (&report.e2).into(),
        }
    }
}

pub fn write_roc_csv(path: &Path, points: &[(f64, f64)]) -> IoResult<()> {
    write_atomic(path, |out| {
        let io = |e| IoError::io(path, e);
        writeln!(out, "fpr,tpr").map_err(io)?;
        for (fpr, tpr) in points {
            writeln!(out, "{fpr},{tpr}").map_err(io)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use patsnd_core::kb::PropertyValuePair;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn kb_round_trip_regroups_lists() {
        let dir = tmp();
        let path = dir.path().join("kb.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"Q317521","label":"Elon Musk","description":"business magnate (born 1971)","properties":[{"pid":"P106","plabel":"occupation","values":["inventor","programmer","engineer","entrepreneur"]},{"pid":"P31","plabel":"instance of","values":["human"]}]}"#,
                "\n\n",
                r#"{"id":"Q8539","label":"The Big Bang Theory"}"#,
                "\n"
            ),
        )
        .unwrap();
        let kb = read_kb(&path, None).unwrap();
        assert_eq!(kb.len(), 2);
        let musk = kb.entity("Q317521").unwrap();
        assert_eq!(musk.pairs.len(), 7);
        assert_eq!(
            musk.pairs[5],
            PropertyValuePair::new("P106", "occupation", "entrepreneur").unwrap()
        );
        let out = dir.path().join("kb2.jsonl");
        write_kb(&out, &kb).unwrap();
        assert_eq!(read_kb(&out, None).unwrap(), kb);
        let lines: Vec<KbLine> = read_jsonl(&out).unwrap();
        assert_eq!(lines[0].properties[0].values.len(), 4);
    }

    #[test]
    fn parse_errors_carry_path_and_line() {
        let dir = tmp();
        let path = dir.path().join("kb.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"label\":\"A\"}\n{\"id\":\"a\",\"label\":\"B\"}\n").unwrap();
        let msg = read_kb(&path, None).unwrap_err().to_string();
        assert!(msg.contains("kb.jsonl:2"), "{msg}");
        std::fs::write(&path, "{\"id\":\"a\"\n").unwrap();
        let msg = read_kb(&path, None).unwrap_err().to_string();
        assert!(msg.contains("kb.jsonl:1"), "{msg}");
        let missing = dir.path().join("nope.jsonl");
        assert!(read_kb(&missing, None).unwrap_err().to_string().contains("nope.jsonl"));
    }

    #[test]
    fn instance_wire_format() {
        let dir = tmp();
        let path = dir.path().join("inst.jsonl");
        let line = r#"{"text":"Elon Musk starred in The Big Bang Theory.","e1":{"id":"Q8539","start":21,"end":40},"e2":{"id":"Q317521","start":0,"end":9},"relation":"P161","label":"NOVEL"}"#;
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let inst = read_instances(&path).unwrap();
        assert_eq!(inst[0].label, InstanceLabel::Novel);
        assert_eq!(inst[0].e1.span.slice(&inst[0].text).unwrap(), "The Big Bang Theory");
        let out = dir.path().join("out.jsonl");
        write_instances(&out, &inst).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap().trim(), line);

        std::fs::write(&path, line.replace("\"end\":40", "\"end\":99")).unwrap();
        assert!(read_instances(&path).is_err());
    }

    #[test]
    fn flat_config() {
        let dir = tmp();
        let path = dir.path().join("train.cfg");
        std::fs::write(&path, "dim_H = 16\nheads = 2\nlearning_rate = 0.01\n# comment\nepochs = 3\n").unwrap();
        let cfg = read_train_config(&path).unwrap();
        assert_eq!((cfg.dim_h, cfg.heads, cfg.epochs), (16, 2, 3));
        assert_eq!(cfg.batch_size, 256);
        let again = dir.path().join("again.cfg");
        write_train_config(&again, &cfg).unwrap();
        assert_eq!(read_train_config(&again).unwrap(), cfg);

        std::fs::write(&path, "dim_H = 16\nwarmup = 3\n").unwrap();
        let msg = read_train_config(&path).unwrap_err().to_string();
        assert!(msg.contains("train.cfg:2"), "{msg}");
        std::fs::write(&path, "heads = 0\n").unwrap();
        assert!(read_train_config(&path).is_err());
    }

    #[test]
    fn report_weights_in_percent() {
        let pairs = [
            PropertyValuePair::new("P31", "instance of", "human").unwrap(),
            PropertyValuePair::new("P106", "occupation", "engineer").unwrap(),
        ];
        let att = EntityAttention::rank("Q1", &pairs, &[0.25, 0.75]);
        let line = EntityAttentionLine::from(&att);
        assert_eq!(line.properties[0].pid, "P106");
        assert_eq!(line.properties[0].weight_pct, 75.0);
        assert_eq!(line.properties[1].rank, 2);
    }
}
