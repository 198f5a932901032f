//! Relation classification of an entity pair in a sentence.
//!
//! Entity spans are wrapped in `[E1]..[/E1]` and `[E2]..[/E2]` markers, the
//! marked sentence is encoded with the pooled text encoder, and a single
//! softmax layer maps the features onto the relation catalog. An oracle
//! source that passes gold relations through is available for evaluating
//! the scorer in isolation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::dsbuild::{FactInstance, Span};
use crate::encoder::{encode_pooled, TextEncoder};
use crate::linalg;
use crate::training::Adam;
use crate::{Error, Result};

pub const E1_START: &str = "[E1]";
pub const E1_END: &str = "[/E1]";
pub const E2_START: &str = "[E2]";
pub const E2_END: &str = "[/E2]";

/// Inserts entity markers around both spans.
pub fn mark_entities(text: &str, e1: Span, e2: Span) -> Result<String> {
    let r1 = e1.byte_range(text)?;
    let r2 = e2.byte_range(text)?;
    if e1.overlaps(&e2) {
        return Err(Error::InvalidInput("entity spans overlap".to_string()));
    }
    let mut cuts = [
        (r1.start, E1_START),
        (r1.end, E1_END),
        (r2.start, E2_START),
        (r2.end, E2_END),
    ];
    // At a shared boundary the closing marker goes first.
    cuts.sort_by_key(|&(at, marker)| (at, !marker.starts_with("[/")));
    let mut out = String::with_capacity(text.len() + 20);
    let mut last = 0;
    for (at, marker) in cuts {
        out.push_str(&text[last..at]);
        out.push(' ');
        out.push_str(marker);
        out.push(' ');
        last = at;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelationPrediction {
    pub relation_id: String,
    pub probabilities: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2_lambda: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 256,
            epochs: 10,
            l2_lambda: 1e-4,
            seed: 0,
        }
    }
}

/// Linear softmax classifier over the relation catalog. `weight` is
/// `dim_f x relations`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub relation_ids: Vec<String>,
    pub dim_f: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierModel {
    pub fn zeros(relation_ids: Vec<String>, dim_f: usize) -> Self {
        let r = relation_ids.len();
        Self {
            relation_ids,
            dim_f,
            weight: vec![0.0; dim_f * r],
            bias: vec![0.0; r],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.relation_ids.len();
        if r == 0 || self.weight.len() != self.dim_f * r || self.bias.len() != r {
            return Err(Error::Shape(format!(
                "classifier with {r} relations, {} weights, {} biases",
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    fn probabilities(&self, features: &[f64]) -> Vec<f64> {
        let r = self.relation_ids.len();
        let mut logits = self.bias.clone();
        for (row, &f) in self.weight.chunks_exact(r).zip(features) {
            if f != 0.0 {
                linalg::axpy(&mut logits, f, row);
            }
        }
        let mut probs = vec![0.0; r];
        linalg::softmax_into(&logits, &mut probs);
        probs
    }

    fn prediction(&self, probs: Vec<f64>) -> RelationPrediction {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        RelationPrediction {
            relation_id: self.relation_ids[best].clone(),
            probabilities: self.relation_ids.iter().cloned().zip(probs).collect(),
        }
    }

    pub fn predict<E: TextEncoder + ?Sized>(
        &self,
        text: &str,
        e1: Span,
        e2: Span,
        encoder: &E,
    ) -> Result<RelationPrediction> {
        let features = encode_pooled(encoder, &mark_entities(text, e1, e2)?)?;
        if features.len() != self.dim_f {
            return Err(Error::Shape(format!(
                "classifier expects {} features, encoder gives {}",
                self.dim_f,
                features.len()
            )));
        }
        Ok(self.prediction(self.probabilities(&features)))
    }
}

/// Where relation labels come from at inference time.
#[derive(Debug, Clone, PartialEq)]
pub enum RelationSource {
    /// Pass the instance's gold relation through with probability 1.
    Oracle,
    Classifier(ClassifierModel),
}

impl RelationSource {
    pub fn predict<E: TextEncoder + ?Sized>(
        &self,
        instance: &FactInstance,
        encoder: &E,
    ) -> Result<RelationPrediction> {
        match self {
            RelationSource::Oracle => {
                if instance.relation_id.is_empty() {
                    return Err(Error::InvalidInput(
                        "oracle relations need a gold relation".to_string(),
                    ));
                }
                let mut probabilities = BTreeMap::new();
                probabilities.insert(instance.relation_id.clone(), 1.0);
                Ok(RelationPrediction {
                    relation_id: instance.relation_id.clone(),
                    probabilities,
                })
            }
            RelationSource::Classifier(model) => {
                model.predict(&instance.text, instance.e1.span, instance.e2.span, encoder)
            }
        }
    }
}

/// Trains the classifier with cross-entropy and Adam.
pub fn train_relation_classifier<E: TextEncoder + ?Sized>(
    train: &[FactInstance],
    catalog: &[String],
    encoder: &E,
    config: &ClassifierConfig,
) -> Result<ClassifierModel> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if catalog.is_empty() {
        return Err(Error::InvalidInput("empty relation catalog".to_string()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidInput(
            "classifier batch_size and epochs must be positive".to_string(),
        ));
    }
    let labels = train
        .iter()
        .map(|inst| {
            catalog
                .iter()
                .position(|r| *r == inst.relation_id)
                .ok_or_else(|| Error::Label(inst.relation_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let features = train
        .iter()
        .map(|inst| encode_pooled(encoder, &mark_entities(&inst.text, inst.e1.span, inst.e2.span)?))
        .collect::<Result<Vec<_>>>()?;

    let r = catalog.len();
    let mut model = ClassifierModel::zeros(catalog.to_vec(), encoder.dim());
    let mut adam = Adam::new([model.weight.len(), model.bias.len()], config.learning_rate);
    let mut rng = crate::seeded_rng(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut gw = vec![0.0; model.weight.len()];
            let mut gb = vec![0.0; r];
            let inv_b = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let mut delta = model.probabilities(&features[i]);
                delta[labels[i]] -= 1.0;
                linalg::axpy(&mut gb, inv_b, &delta);
                for (row, &f) in gw.chunks_exact_mut(r).zip(&features[i]) {
                    if f != 0.0 {
                        linalg::axpy(row, f * inv_b, &delta);
                    }
                }
            }
            linalg::axpy(&mut gw, 2.0 * config.l2_lambda, &model.weight);
            linalg::axpy(&mut gb, 2.0 * config.l2_lambda, &model.bias);
            if !linalg::all_finite(&gw) || !linalg::all_finite(&gb) {
                return Err(Error::NonFinite("classifier gradient"));
            }
            adam.step(vec![&mut model.weight, &mut model.bias], vec![&gw, &gb]);
        }
    }
    Ok(model)
}

/// Unweighted mean of per-relation F1 over the relations that occur in
/// `gold` or `predicted`.
pub fn macro_f1(gold: &[&str], predicted: &[&str]) -> Result<f64> {
    if gold.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} gold labels, {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::UndefinedMetric("macro F1 of an empty set"));
    }
    // relation -> (true positives, false positives, false negatives)
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (&g, &p) in gold.iter().zip(predicted) {
        if g == p {
            counts.entry(g).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(g).or_default().2 += 1;
        }
    }
    let total: f64 = counts
        .values()
        .map(|&(tp, fp, fn_)| {
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / counts.len() as f64)
}
