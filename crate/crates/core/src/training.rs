//! Max-margin training of the scorer over normal and pseudo-novel triples.
//!
//! Every epoch draws one fresh corruption per normal triple, shuffles the
//! pairs, and minimizes the mean hinge loss
//! `max(S(neg) - S(pos) + margin, 0)` plus `l2_lambda * |theta|^2` over the
//! projection and relation parameters with Adam.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::contrastive::{ContrastiveGenerator, Triple, TripleLabel};
use crate::encoder::{encode_pooled, TextEncoder};
use crate::kb::KnowledgeBase;
use crate::linalg;
use crate::pat::{AttentionTrace, SnsModel, DEFAULT_DIM_H, DEFAULT_HEADS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    #[cfg_attr(feature = "serde", serde(rename = "dim_H"))]
    pub dim_h: usize,
    pub heads: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
    pub margin: f64,
    pub seed: u64,
    /// Reject corruptions that reproduce a training triple.
    pub filter_known_triples: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim_h: DEFAULT_DIM_H,
            heads: DEFAULT_HEADS,
            batch_size: 256,
            learning_rate: 0.001,
            l2_lambda: 1e-4,
            epochs: 10,
            margin: 1.0,
            seed: 0,
            filter_known_triples: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("train config: {what}")));
        if self.dim_h == 0 || self.heads == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("dim_H, heads, batch_size and epochs must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be finite and non-negative");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be finite and non-negative");
        }
        Ok(())
    }
}

/// `max(s_pseudo - s_normal + margin, 0)`.
pub fn hinge_loss(s_normal: f64, s_pseudo: f64, margin: f64) -> Result<f64> {
    if !(s_normal.is_finite() && s_pseudo.is_finite() && margin.is_finite()) {
        return Err(Error::NonFinite("hinge loss input"));
    }
    Ok((s_pseudo - s_normal + margin).max(0.0))
}

/// Adam over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    /// One moment buffer per tensor length in `shapes`.
    pub fn new(shapes: impl IntoIterator<Item = usize>, learning_rate: f64) -> Self {
        let first: Vec<Vec<f64>> = shapes.into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn for_model(model: &SnsModel, learning_rate: f64) -> Self {
        Self::new(model.tensors().iter().map(|t| t.len()), learning_rate)
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), self.first.len(), "tensor count changed");
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.step));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.step));
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((theta, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for j in 0..theta.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                theta[j] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
    }
}

/// Encoder features for every distinct property label and value text in a
/// knowledge base, plus each entity's background as rows into that table.
#[derive(Debug, Clone)]
pub struct PreparedKb {
    dim_f: usize,
    features: Vec<f64>,
    text_count: usize,
    entity_index: BTreeMap<String, usize>,
    /// Per entity: `(property text, value text)` ids in background order.
    entity_rows: Vec<Vec<(usize, usize)>>,
}

impl PreparedKb {
    pub fn build<E: TextEncoder + ?Sized>(kb: &KnowledgeBase, encoder: &E) -> Result<Self> {
        let dim_f = encoder.dim();
        let mut text_ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut features = Vec::new();
        let mut entity_index = BTreeMap::new();
        let mut entity_rows = Vec::with_capacity(kb.len());
        for record in kb.entities() {
            let mut rows = Vec::new();
            for pair in kb.background(&record.entity_id)? {
                let mut ids = [0usize; 2];
                for (slot, text) in ids.iter_mut().zip([&pair.property_label, &pair.value_text]) {
                    *slot = match text_ids.get(text.as_str()) {
                        Some(&id) => id,
                        None => {
                            let id = text_ids.len();
                            features.extend(encode_pooled(encoder, text)?);
                            text_ids.insert(text, id);
                            id
                        }
                    };
                }
                rows.push((ids[0], ids[1]));
            }
            entity_index.insert(record.entity_id.clone(), entity_rows.len());
            entity_rows.push(rows);
        }
        let text_count = text_ids.len();
        Ok(Self {
            dim_f,
            features,
            text_count,
            entity_index,
            entity_rows,
        })
    }

    pub fn text_count(&self) -> usize {
        self.text_count
    }

    fn entity(&self, id: &str) -> Result<usize> {
        self.entity_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::MissingEntity(id.to_string()))
    }

    fn feature(&self, text: usize) -> &[f64] {
        &self.features[text * self.dim_f..(text + 1) * self.dim_f]
    }
}

/// A triple resolved to relation and entity indices.
#[derive(Debug, Clone, Copy)]
struct ResolvedTriple {
    relation: usize,
    e1: usize,
    e2: usize,
}

fn resolve(model: &SnsModel, prepared: &PreparedKb, t: &Triple) -> Result<ResolvedTriple> {
    Ok(ResolvedTriple {
        relation: model.pat.relation_index(&t.relation_id)?,
        e1: prepared.entity(&t.e1)?,
        e2: prepared.entity(&t.e2)?,
    })
}

/// Projected hidden vectors for the texts touched by one batch.
struct HiddenCache {
    dim_h: usize,
    slot_of: BTreeMap<usize, usize>,
    texts: Vec<usize>,
    hidden: Vec<f64>,
    grads: Vec<f64>,
}

impl HiddenCache {
    fn build(model: &SnsModel, prepared: &PreparedKb, entities: impl Iterator<Item = usize>) -> Self {
        let dim_h = model.dim_h();
        let mut slot_of = BTreeMap::new();
        let mut texts = Vec::new();
        for e in entities {
            for &(p, v) in &prepared.entity_rows[e] {
                for t in [p, v] {
                    slot_of.entry(t).or_insert_with(|| {
                        texts.push(t);
                        texts.len() - 1
                    });
                }
            }
        }
        let mut hidden = Vec::with_capacity(texts.len() * dim_h);
        for &t in &texts {
            let start = hidden.len();
            hidden.extend_from_slice(&model.projection.bias);
            model
                .projection
                .apply_into(prepared.feature(t), &mut hidden[start..]);
        }
        let grads = vec![0.0; hidden.len()];
        Self {
            dim_h,
            slot_of,
            texts,
            hidden,
            grads,
        }
    }

    fn row(&self, text: usize) -> &[f64] {
        let s = self.slot_of[&text];
        &self.hidden[s * self.dim_h..(s + 1) * self.dim_h]
    }

    fn gather(&self, rows: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
        let mut p = Vec::with_capacity(rows.len() * self.dim_h);
        let mut v = Vec::with_capacity(rows.len() * self.dim_h);
        for &(pt, vt) in rows {
            p.extend_from_slice(self.row(pt));
            v.extend_from_slice(self.row(vt));
        }
        (p, v)
    }

    fn scatter(&mut self, rows: &[(usize, usize)], dp: &[f64], dv: &[f64]) {
        let d = self.dim_h;
        for (i, &(pt, vt)) in rows.iter().enumerate() {
            for (t, src) in [(pt, dp), (vt, dv)] {
                let s = self.slot_of[&t];
                linalg::axpy(&mut self.grads[s * d..(s + 1) * d], 1.0, &src[i * d..(i + 1) * d]);
            }
        }
    }
}

struct SideForward {
    p: Vec<f64>,
    v: Vec<f64>,
    trace: AttentionTrace,
    h: Vec<f64>,
}

struct TripleForward {
    sides: [SideForward; 2],
    score: f64,
}

fn forward(model: &SnsModel, prepared: &PreparedKb, cache: &HiddenCache, t: ResolvedTriple) -> TripleForward {
    let rp = &model.pat.relations[t.relation];
    let d = model.dim_h();
    let side = |e: usize| {
        let rows = &prepared.entity_rows[e];
        let (p, v) = cache.gather(rows);
        let trace = AttentionTrace::compute(rp, &p, rows.len());
        let h = trace.summary(&v, d);
        SideForward { p, v, trace, h }
    };
    let sides = [side(t.e1), side(t.e2)];
    let score = rp.score_summaries(&sides[0].h, &sides[1].h);
    TripleForward { sides, score }
}

fn backward(
    model: &SnsModel,
    prepared: &PreparedKb,
    cache: &mut HiddenCache,
    t: ResolvedTriple,
    fwd: &TripleForward,
    scale: f64,
    grads: &mut SnsModel,
) {
    let rp = &model.pat.relations[t.relation];
    let d = model.dim_h();
    {
        let g = &mut grads.pat.relations[t.relation];
        linalg::axpy(&mut g.scorer_weight[..d], scale, &fwd.sides[0].h);
        linalg::axpy(&mut g.scorer_weight[d..], scale, &fwd.sides[1].h);
        g.scorer_bias += scale;
    }
    for (half, (side, e)) in fwd.sides.iter().zip([t.e1, t.e2]).enumerate() {
        let dh: Vec<f64> = rp.scorer_weight[half * d..(half + 1) * d]
            .iter()
            .map(|u| u * scale)
            .collect();
        let n = side.trace.n;
        let mut dp = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        side.trace.backward(
            rp,
            &side.p,
            &side.v,
            &dh,
            &mut grads.pat.relations[t.relation],
            &mut dp,
            &mut dv,
        );
        cache.scatter(&prepared.entity_rows[e], &dp, &dv);
    }
}

/// Objective value and gradient of one minibatch of `(normal, pseudo-novel)`
/// pairs: `mean_i hinge_i + l2_lambda * |theta|^2`.
pub fn batch_objective(
    model: &SnsModel,
    prepared: &PreparedKb,
    pairs: &[(Triple, Triple)],
    margin: f64,
    l2_lambda: f64,
) -> Result<(f64, SnsModel)> {
    let resolved = pairs
        .iter()
        .map(|(pos, neg)| Ok((resolve(model, prepared, pos)?, resolve(model, prepared, neg)?)))
        .collect::<Result<Vec<_>>>()?;
    batch_objective_resolved(model, prepared, &resolved, margin, l2_lambda)
}

fn batch_objective_resolved(
    model: &SnsModel,
    prepared: &PreparedKb,
    pairs: &[(ResolvedTriple, ResolvedTriple)],
    margin: f64,
    l2_lambda: f64,
) -> Result<(f64, SnsModel)> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut grads = model.zeros_like();
    let mut cache = HiddenCache::build(
        model,
        prepared,
        pairs.iter().flat_map(|(p, n)| [p.e1, p.e2, n.e1, n.e2]),
    );
    let inv_b = 1.0 / pairs.len() as f64;
    let mut hinge_total = 0.0;
    for &(pos, neg) in pairs {
        let fp = forward(model, prepared, &cache, pos);
        let fn_ = forward(model, prepared, &cache, neg);
        let loss = hinge_loss(fp.score, fn_.score, margin)?;
        hinge_total += loss;
        if loss > 0.0 {
            backward(model, prepared, &mut cache, pos, &fp, -inv_b, &mut grads);
            backward(model, prepared, &mut cache, neg, &fn_, inv_b, &mut grads);
        }
    }

    let d = model.dim_h();
    for (slot, &t) in cache.texts.iter().enumerate() {
        let g = &cache.grads[slot * d..(slot + 1) * d];
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        linalg::axpy(&mut grads.projection.bias, 1.0, g);
        for (c, &f) in prepared.feature(t).iter().enumerate() {
            if f != 0.0 {
                linalg::axpy(&mut grads.projection.weight[c * d..(c + 1) * d], f, g);
            }
        }
    }

    let mut objective = hinge_total * inv_b;
    if l2_lambda > 0.0 {
        objective += l2_lambda * model.squared_norm();
        for (g, theta) in grads.tensors_mut().into_iter().zip(model.tensors()) {
            linalg::axpy(g, 2.0 * l2_lambda, theta);
        }
    }
    Ok((objective, grads))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Relation order of a new model: the catalog when the knowledge base has
/// one, otherwise the distinct training relations in sorted order.
pub fn relation_catalog(kb: &KnowledgeBase, triples: &[Triple]) -> Vec<String> {
    if kb.relations().is_empty() {
        let mut ids: Vec<String> = triples.iter().map(|t| t.relation_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    } else {
        kb.relations().iter().map(|r| r.relation_id.clone()).collect()
    }
}

/// Trains a freshly initialized model. Equivalent to
/// [`train_with_clock`] with a clock that always reads zero.
pub fn train<E: TextEncoder + ?Sized>(
    train_triples: &[Triple],
    kb: &KnowledgeBase,
    encoder: &E,
    config: &TrainConfig,
) -> Result<(SnsModel, Vec<EpochRecord>)> {
    train_with_clock(train_triples, kb, encoder, config, &|| 0.0)
}

/// Trains a freshly initialized model; `clock` returns seconds and is only
/// used to fill `wall_seconds` in the log.
pub fn train_with_clock<E: TextEncoder + ?Sized>(
    train_triples: &[Triple],
    kb: &KnowledgeBase,
    encoder: &E,
    config: &TrainConfig,
    clock: &dyn Fn() -> f64,
) -> Result<(SnsModel, Vec<EpochRecord>)> {
    config.validate()?;
    if train_triples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if let Some(t) = train_triples.iter().find(|t| t.label != TripleLabel::Normal) {
        return Err(Error::InvalidInput(format!(
            "training triple ({}, {}, {}) is not NORMAL",
            t.e1, t.relation_id, t.e2
        )));
    }
    let mut rng = crate::seeded_rng(config.seed);
    let relations = relation_catalog(kb, train_triples);
    let mut model = SnsModel::random(encoder.dim(), config.dim_h, config.heads, relations, &mut rng);
    let prepared = PreparedKb::build(kb, encoder)?;
    let positives = train_triples
        .iter()
        .map(|t| resolve(&model, &prepared, t))
        .collect::<Result<Vec<_>>>()?;
    let generator =
        ContrastiveGenerator::new(kb, train_triples).with_filter(config.filter_known_triples);
    let mut adam = Adam::for_model(&model, config.learning_rate);
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..positives.len()).collect();

    for epoch in 1..=config.epochs {
        let started = clock();
        let negatives = generator
            .generate_epoch_negatives(train_triples, &mut rng)?
            .iter()
            .map(|t| resolve(&model, &prepared, t))
            .collect::<Result<Vec<_>>>()?;
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let pairs: Vec<_> = chunk.iter().map(|&i| (positives[i], negatives[i])).collect();
            let (loss, grads) = batch_objective_resolved(
                &model,
                &prepared,
                &pairs,
                config.margin,
                config.l2_lambda,
            )?;
            if !loss.is_finite() || grads.tensors().iter().any(|g| !linalg::all_finite(g)) {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                    loss,
                });
            }
            adam.step(model.tensors_mut(), grads.tensors());
            weighted += loss * chunk.len() as f64;
        }
        log.push(EpochRecord {
            epoch,
            mean_loss: weighted / positives.len() as f64,
            wall_seconds: clock() - started,
        });
    }
    Ok((model, log))
}
