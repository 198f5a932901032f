//! Detection and explanation metrics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dsbuild::{FactInstance, InstanceLabel};
use crate::encoder::TextEncoder;
use crate::kb::KnowledgeBase;
use crate::pat::{AttentionReport, EntityAttention, PropertyMatrices, SnsModel};
use crate::relclf::RelationSource;
use crate::{Error, Result};

/// Area under the ROC curve with NOVEL as the positive class. Tied scores
/// count one half.
pub fn auc(scores: &[f64], labels: &[InstanceLabel]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC score"));
    }
    let n_pos = labels.iter().filter(|&&l| l == InstanceLabel::Novel).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both NORMAL and NOVEL instances"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks of the positives, kept doubled so it stays an integer.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled_mid = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k] == InstanceLabel::Novel {
                rank_sum2 += doubled_mid;
            }
        }
        i = j + 1;
    }
    let u2 = rank_sum2 - (n_pos * (n_pos + 1)) as u64;
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// ROC curve as `(false positive rate, true positive rate)` points, from
/// `(0, 0)` to `(1, 1)`, one point per distinct score threshold.
pub fn roc_points(scores: &[f64], labels: &[InstanceLabel]) -> Result<Vec<(f64, f64)>> {
    auc(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == InstanceLabel::Novel).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::with_capacity(order.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    for (pos, &k) in order.iter().enumerate() {
        match labels[k] {
            InstanceLabel::Novel => tp += 1,
            InstanceLabel::Normal => fp += 1,
        }
        let last_of_tie = order
            .get(pos + 1)
            .is_none_or(|&next| scores[next] != scores[k]);
        if last_of_tie {
            points.push((fp as f64 / n_neg, tp as f64 / n_pos));
        }
    }
    Ok(points)
}

/// Human-annotated key properties of one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KeyPropertyAnnotation {
    pub instance_id: String,
    pub key_props_e1: BTreeSet<String>,
    pub key_props_e2: BTreeSet<String>,
}

fn hits(attention: &EntityAttention, keys: &BTreeSet<String>, top_n: usize) -> bool {
    attention.top_properties(top_n).any(|p| keys.contains(p))
}

fn instance_ncs(report: &AttentionReport, ann: &KeyPropertyAnnotation, top_n: usize) -> f64 {
    let mut score = 0.0;
    if hits(&report.e1, &ann.key_props_e1, top_n) {
        score += 0.5;
    }
    if hits(&report.e2, &ann.key_props_e2, top_n) {
        score += 0.5;
    }
    score
}

fn annotation_index(
    annotations: &[KeyPropertyAnnotation],
) -> BTreeMap<&str, &KeyPropertyAnnotation> {
    annotations.iter().map(|a| (a.instance_id.as_str(), a)).collect()
}

/// Mean novelty-cause score at `top_n` over `(instance id, report)` pairs.
pub fn ncs(
    reports: &[(String, AttentionReport)],
    annotations: &[KeyPropertyAnnotation],
    top_n: usize,
) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::UndefinedMetric("NCS of an empty set"));
    }
    if top_n == 0 {
        return Err(Error::InvalidInput("top_n must be positive".to_string()));
    }
    let index = annotation_index(annotations);
    let mut total = 0.0;
    for (id, report) in reports {
        let ann = index
            .get(id.as_str())
            .ok_or_else(|| Error::Alignment(format!("no annotation for instance {id}")))?;
        total += instance_ncs(report, ann, top_n);
    }
    Ok(total / reports.len() as f64)
}

/// NCS of rankings shuffled uniformly at random, averaged over `trials`.
pub fn random_ncs_baseline<R: Rng + ?Sized>(
    reports: &[(String, AttentionReport)],
    annotations: &[KeyPropertyAnnotation],
    top_n: usize,
    rng: &mut R,
    trials: usize,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be positive".to_string()));
    }
    let mut shuffled = reports.to_vec();
    let mut total = 0.0;
    for _ in 0..trials {
        for (_, report) in shuffled.iter_mut() {
            report.e1.ranked.shuffle(rng);
            report.e2.ranked.shuffle(rng);
        }
        total += ncs(&shuffled, annotations, top_n)?;
    }
    Ok(total / trials as f64)
}

/// Metrics of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalResult {
    pub auc: f64,
    /// NCS keyed by Top-N. Empty when there are no annotations.
    pub ncs: BTreeMap<usize, f64>,
    /// Novelty score per test instance, in input order.
    pub scores: Vec<f64>,
    pub n_normal: usize,
    pub n_novel: usize,
}

/// Scores test instances and explains the annotated ones.
pub struct Evaluator<'a, E: ?Sized> {
    model: &'a SnsModel,
    kb: &'a KnowledgeBase,
    encoder: &'a E,
    matrices: BTreeMap<String, PropertyMatrices>,
}

impl<'a, E: TextEncoder + ?Sized> Evaluator<'a, E> {
    pub fn new(model: &'a SnsModel, kb: &'a KnowledgeBase, encoder: &'a E) -> Self {
        Self {
            model,
            kb,
            encoder,
            matrices: BTreeMap::new(),
        }
    }

    fn ensure(&mut self, entity_id: &str) -> Result<()> {
        if !self.matrices.contains_key(entity_id) {
            let m = self.model.entity_matrices(self.kb, entity_id, self.encoder)?;
            self.matrices.insert(entity_id.to_string(), m);
        }
        Ok(())
    }

    /// Novelty score `-S` of `(e1, relation, e2)`.
    pub fn novelty(&mut self, e1: &str, relation_id: &str, e2: &str) -> Result<f64> {
        self.ensure(e1)?;
        self.ensure(e2)?;
        let s = self
            .model
            .score_matrices(relation_id, &self.matrices[e1], &self.matrices[e2])?;
        Ok(-s)
    }

    pub fn explain(&mut self, e1: &str, relation_id: &str, e2: &str) -> Result<AttentionReport> {
        let novelty_score = self.novelty(e1, relation_id, e2)?;
        let rp = self.model.pat.get(relation_id)?;
        let rank = |id: &str, m: &PropertyMatrices| -> Result<EntityAttention> {
            let w = rp.attention_weights(&m.p)?;
            Ok(EntityAttention::rank(id, self.kb.background(id)?, &w))
        };
        Ok(AttentionReport {
            relation_id: relation_id.to_string(),
            e1: rank(e1, &self.matrices[e1])?,
            e2: rank(e2, &self.matrices[e2])?,
            novelty_score,
        })
    }
}

/// Top-N values reported by [`evaluate`].
pub const NCS_TOP_N: [usize; 3] = [1, 2, 3];

/// Scores `test` with relations from `source`, computes AUC, and NCS at
/// Top-1/2/3 over the instances named in `annotations`.
pub fn evaluate<E: TextEncoder + ?Sized>(
    model: &SnsModel,
    kb: &KnowledgeBase,
    encoder: &E,
    test: &[FactInstance],
    source: &RelationSource,
    annotations: &[KeyPropertyAnnotation],
) -> Result<EvalResult> {
    let reports = evaluate_with_reports(model, kb, encoder, test, source, annotations)?;
    Ok(reports.0)
}

/// [`evaluate`] plus the attention reports of the annotated instances.
pub fn evaluate_with_reports<E: TextEncoder + ?Sized>(
    model: &SnsModel,
    kb: &KnowledgeBase,
    encoder: &E,
    test: &[FactInstance],
    source: &RelationSource,
    annotations: &[KeyPropertyAnnotation],
) -> Result<(EvalResult, Vec<(String, AttentionReport)>)> {
    let mut evaluator = Evaluator::new(model, kb, encoder);
    let mut relations = Vec::with_capacity(test.len());
    let mut scores = Vec::with_capacity(test.len());
    for inst in test {
        let relation = source.predict(inst, encoder)?.relation_id;
        scores.push(evaluator.novelty(&inst.e1.entity_id, &relation, &inst.e2.entity_id)?);
        relations.push(relation);
    }
    let labels: Vec<InstanceLabel> = test.iter().map(|i| i.label).collect();
    let auc = auc(&scores, &labels)?;

    let mut by_id = BTreeMap::new();
    for (k, inst) in test.iter().enumerate() {
        if let Some(id) = &inst.id {
            by_id.insert(id.as_str(), k);
        }
    }
    let mut reports = Vec::with_capacity(annotations.len());
    for ann in annotations {
        let &k = by_id.get(ann.instance_id.as_str()).ok_or_else(|| {
            Error::Alignment(format!("annotation for unknown instance {}", ann.instance_id))
        })?;
        let inst = &test[k];
        let report = evaluator.explain(&inst.e1.entity_id, &relations[k], &inst.e2.entity_id)?;
        reports.push((ann.instance_id.clone(), report));
    }
    let mut ncs_by_n = BTreeMap::new();
    if !reports.is_empty() {
        for n in NCS_TOP_N {
            ncs_by_n.insert(n, ncs(&reports, annotations, n)?);
        }
    }
    let n_novel = labels.iter().filter(|&&l| l == InstanceLabel::Novel).count();
    Ok((
        EvalResult {
            auc,
            ncs: ncs_by_n,
            scores,
            n_normal: labels.len() - n_novel,
            n_novel,
        },
        reports,
    ))
}
