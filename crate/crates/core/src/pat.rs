//! Property attention network and triple scorer.
//!
//! For relation `r` with `K` heads, each property vector `p_i` gets a scalar
//! logit per head, `g_ik = relu(p_i . w_rk + b_rk)`. Heads are softmaxed over
//! the properties independently and averaged into `alpha_bar`, which weighs
//! the value vectors: `h = sum_i alpha_bar_i v_i`. A triple is scored as
//! `S = [h1; h2] . u_r + c_r` with the same attention parameters on both
//! sides. Higher `S` means more normal; the novelty score is `-S`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::encoder::{encode_pooled, Projection, TextEncoder};
use crate::kb::{KnowledgeBase, PropertyValuePair};
use crate::linalg;
use crate::{Error, Result};

/// Number of attention heads used unless configured otherwise.
pub const DEFAULT_HEADS: usize = 8;
/// Hidden width used unless configured otherwise.
pub const DEFAULT_DIM_H: usize = 300;

/// Attention and scoring parameters for one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationParams {
    /// `heads x dim_h`, row `k` is the weight of head `k`.
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
    /// `2 * dim_h`: first half applies to the e1 summary, second to e2.
    pub scorer_weight: Vec<f64>,
    pub scorer_bias: f64,
}

impl RelationParams {
    pub fn zeros(dim_h: usize, heads: usize) -> Self {
        Self {
            head_weights: vec![0.0; heads * dim_h],
            head_bias: vec![0.0; heads],
            scorer_weight: vec![0.0; 2 * dim_h],
            scorer_bias: 0.0,
        }
    }

    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn random<R: Rng + ?Sized>(dim_h: usize, heads: usize, rng: &mut R) -> Self {
        let head_scale = 1.0 / libm::sqrt(dim_h as f64);
        let scorer_scale = 1.0 / libm::sqrt((2 * dim_h) as f64);
        Self {
            head_weights: (0..heads * dim_h)
                .map(|_| rng.gen_range(-head_scale..=head_scale))
                .collect(),
            head_bias: vec![0.0; heads],
            scorer_weight: (0..2 * dim_h)
                .map(|_| rng.gen_range(-scorer_scale..=scorer_scale))
                .collect(),
            scorer_bias: 0.0,
        }
    }

    pub fn heads(&self) -> usize {
        self.head_bias.len()
    }

    pub fn dim_h(&self) -> usize {
        self.scorer_weight.len() / 2
    }

    fn check(&self) -> Result<()> {
        let (k, d) = (self.heads(), self.dim_h());
        if k == 0 || d == 0 || self.head_weights.len() != k * d || self.scorer_weight.len() != 2 * d {
            return Err(Error::Shape(format!(
                "relation params: {} head weights, {} head biases, {} scorer weights",
                self.head_weights.len(),
                self.head_bias.len(),
                self.scorer_weight.len()
            )));
        }
        Ok(())
    }

    /// Attention weights `alpha_bar` over the `n` rows of `p` (row-major,
    /// `n x dim_h`).
    pub fn attention_weights(&self, p: &[f64]) -> Result<Vec<f64>> {
        let n = rows_of(p, self.dim_h())?;
        Ok(AttentionTrace::compute(self, p, n).alpha_bar)
    }

    /// The attended value summary `h = sum_i alpha_bar_i v_i`.
    pub fn pat_forward(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim_h();
        let n = rows_of(p, d)?;
        if rows_of(v, d)? != n {
            return Err(Error::Shape(format!(
                "property matrix has {n} rows, value matrix has {}",
                v.len() / d
            )));
        }
        let trace = AttentionTrace::compute(self, p, n);
        Ok(trace.summary(v, d))
    }

    /// `S = [h1; h2] . u + c`.
    pub fn score_summaries(&self, h1: &[f64], h2: &[f64]) -> f64 {
        let d = self.dim_h();
        linalg::dot(&self.scorer_weight[..d], h1)
            + linalg::dot(&self.scorer_weight[d..], h2)
            + self.scorer_bias
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 4] {
        [
            &self.head_weights,
            &self.head_bias,
            &self.scorer_weight,
            core::slice::from_ref(&self.scorer_bias),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.head_weights,
            &mut self.head_bias,
            &mut self.scorer_weight,
            core::slice::from_mut(&mut self.scorer_bias),
        ]
    }
}

fn rows_of(m: &[f64], dim: usize) -> Result<usize> {
    if m.is_empty() {
        return Err(Error::EmptyPropertyList);
    }
    if dim == 0 || !m.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "matrix of {} values is not a multiple of width {dim}",
            m.len()
        )));
    }
    Ok(m.len() / dim)
}

/// Forward intermediates of one attention call, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct AttentionTrace {
    pub n: usize,
    /// Pre-activation logits, `heads x n`.
    pub pre: Vec<f64>,
    /// Per-head softmax weights, `heads x n`.
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl AttentionTrace {
    pub(crate) fn compute(params: &RelationParams, p: &[f64], n: usize) -> Self {
        let (k_heads, d) = (params.heads(), params.dim_h());
        let mut pre = vec![0.0; k_heads * n];
        let mut alpha = vec![0.0; k_heads * n];
        let mut logits = vec![0.0; n];
        let mut alpha_bar = vec![0.0; n];
        for k in 0..k_heads {
            let w = &params.head_weights[k * d..(k + 1) * d];
            let z = &mut pre[k * n..(k + 1) * n];
            for (i, (zi, gi)) in z.iter_mut().zip(logits.iter_mut()).enumerate() {
                *zi = linalg::dot(&p[i * d..(i + 1) * d], w) + params.head_bias[k];
                *gi = zi.max(0.0);
            }
            let a = &mut alpha[k * n..(k + 1) * n];
            linalg::softmax_into(&logits, a);
            linalg::axpy(&mut alpha_bar, 1.0 / k_heads as f64, a);
        }
        Self {
            n,
            pre,
            alpha,
            alpha_bar,
        }
    }

    /// `sum_i alpha_bar_i v_i`, accumulated in a canonical row order
    /// (by weight, then by value row) so the result does not depend on how
    /// the rows were listed.
    pub(crate) fn summary(&self, v: &[f64], d: usize) -> Vec<f64> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_unstable_by(|&a, &b| {
            self.alpha_bar[a]
                .total_cmp(&self.alpha_bar[b])
                .then_with(|| {
                    let (ra, rb) = (&v[a * d..(a + 1) * d], &v[b * d..(b + 1) * d]);
                    ra.iter()
                        .zip(rb)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(Ordering::Equal)
                })
        });
        let mut h = vec![0.0; d];
        for i in order {
            linalg::axpy(&mut h, self.alpha_bar[i], &v[i * d..(i + 1) * d]);
        }
        h
    }

    /// Backprop of `dS/dh` through one side.
    ///
    /// Accumulates into the head parameters of `grads` and into `dp`/`dv`
    /// (both `n x dim_h`).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        params: &RelationParams,
        p: &[f64],
        v: &[f64],
        dh: &[f64],
        grads: &mut RelationParams,
        dp: &mut [f64],
        dv: &mut [f64],
    ) {
        let (k_heads, d, n) = (params.heads(), params.dim_h(), self.n);
        // dS/dalpha_bar_i = dh . v_i; dS/dv_i = alpha_bar_i dh.
        let mut d_abar = vec![0.0; n];
        for i in 0..n {
            d_abar[i] = linalg::dot(dh, &v[i * d..(i + 1) * d]);
            linalg::axpy(&mut dv[i * d..(i + 1) * d], self.alpha_bar[i], dh);
        }
        let inv_k = 1.0 / k_heads as f64;
        for k in 0..k_heads {
            let a = &self.alpha[k * n..(k + 1) * n];
            let z = &self.pre[k * n..(k + 1) * n];
            let mean: f64 = a.iter().zip(&d_abar).map(|(ai, gi)| ai * gi).sum();
            let w = &params.head_weights[k * d..(k + 1) * d];
            for i in 0..n {
                if z[i] <= 0.0 {
                    continue;
                }
                let dz = a[i] * (d_abar[i] - mean) * inv_k;
                if dz == 0.0 {
                    continue;
                }
                let p_i = &p[i * d..(i + 1) * d];
                linalg::axpy(&mut grads.head_weights[k * d..(k + 1) * d], dz, p_i);
                grads.head_bias[k] += dz;
                linalg::axpy(&mut dp[i * d..(i + 1) * d], dz, w);
            }
        }
    }
}

/// Per-relation parameter sets indexed by the relation catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct PatParams {
    pub relation_ids: Vec<String>,
    pub relations: Vec<RelationParams>,
}

impl PatParams {
    pub fn zeros(relation_ids: Vec<String>, dim_h: usize, heads: usize) -> Self {
        let relations = relation_ids
            .iter()
            .map(|_| RelationParams::zeros(dim_h, heads))
            .collect();
        Self {
            relation_ids,
            relations,
        }
    }

    pub fn random<R: Rng + ?Sized>(
        relation_ids: Vec<String>,
        dim_h: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let relations = relation_ids
            .iter()
            .map(|_| RelationParams::random(dim_h, heads, rng))
            .collect();
        Self {
            relation_ids,
            relations,
        }
    }

    pub fn relation_index(&self, relation_id: &str) -> Result<usize> {
        self.relation_ids
            .iter()
            .position(|r| r == relation_id)
            .ok_or_else(|| Error::UnknownRelation(relation_id.to_string()))
    }

    pub fn get(&self, relation_id: &str) -> Result<&RelationParams> {
        Ok(&self.relations[self.relation_index(relation_id)?])
    }

    pub fn attention_weights(&self, relation_id: &str, p: &[f64]) -> Result<Vec<f64>> {
        self.get(relation_id)?.attention_weights(p)
    }

    pub fn pat_forward(&self, relation_id: &str, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.get(relation_id)?.pat_forward(p, v)
    }
}

/// Projected property and value matrices of one entity (`n x dim_h` each).
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyMatrices {
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub rows: usize,
}

/// Encoder-space features of one entity's pairs (`n x dim_f` each), before
/// projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrices {
    pub fp: Vec<f64>,
    pub fv: Vec<f64>,
    pub rows: usize,
}

impl FeatureMatrices {
    pub fn encode<E: TextEncoder + ?Sized>(pairs: &[PropertyValuePair], encoder: &E) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyPropertyList);
        }
        let mut fp = Vec::with_capacity(pairs.len() * encoder.dim());
        let mut fv = Vec::with_capacity(pairs.len() * encoder.dim());
        for pair in pairs {
            fp.extend(encode_pooled(encoder, &pair.property_label)?);
            fv.extend(encode_pooled(encoder, &pair.value_text)?);
        }
        Ok(Self {
            fp,
            fv,
            rows: pairs.len(),
        })
    }

    pub fn project(&self, projection: &Projection) -> Result<PropertyMatrices> {
        let (df, dh) = (projection.dim_f, projection.dim_h);
        if self.rows == 0 {
            return Err(Error::EmptyPropertyList);
        }
        if self.fp.len() != self.rows * df || self.fv.len() != self.rows * df {
            return Err(Error::Shape(format!(
                "feature matrices do not match {} rows of width {df}",
                self.rows
            )));
        }
        let mut p = Vec::with_capacity(self.rows * dh);
        let mut v = Vec::with_capacity(self.rows * dh);
        for i in 0..self.rows {
            let start = p.len();
            p.extend_from_slice(&projection.bias);
            projection.apply_into(&self.fp[i * df..(i + 1) * df], &mut p[start..]);
            v.extend_from_slice(&projection.bias);
            projection.apply_into(&self.fv[i * df..(i + 1) * df], &mut v[start..]);
        }
        Ok(PropertyMatrices {
            p,
            v,
            rows: self.rows,
        })
    }
}

/// Trainable state of the scorer: the shared projection plus the
/// per-relation attention and scoring parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SnsModel {
    pub projection: Projection,
    pub pat: PatParams,
}

impl SnsModel {
    pub fn zeros(dim_f: usize, dim_h: usize, heads: usize, relation_ids: Vec<String>) -> Self {
        Self {
            projection: Projection::zeros(dim_f, dim_h),
            pat: PatParams::zeros(relation_ids, dim_h, heads),
        }
    }

    pub fn random<R: Rng + ?Sized>(
        dim_f: usize,
        dim_h: usize,
        heads: usize,
        relation_ids: Vec<String>,
        rng: &mut R,
    ) -> Self {
        let projection = Projection::random(dim_f, dim_h, rng);
        Self {
            projection,
            pat: PatParams::random(relation_ids, dim_h, heads, rng),
        }
    }

    /// A zero-filled model with the same shapes, used for gradients and
    /// optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let heads = self.heads();
        Self::zeros(
            self.projection.dim_f,
            self.projection.dim_h,
            heads,
            self.pat.relation_ids.clone(),
        )
    }

    pub fn dim_f(&self) -> usize {
        self.projection.dim_f
    }

    pub fn dim_h(&self) -> usize {
        self.projection.dim_h
    }

    pub fn heads(&self) -> usize {
        self.pat.relations.first().map_or(DEFAULT_HEADS, |r| r.heads())
    }

    pub fn relation_ids(&self) -> &[String] {
        &self.pat.relation_ids
    }

    /// Checks that every tensor has the shape implied by the configuration.
    pub fn validate(&self) -> Result<()> {
        let p = &self.projection;
        if p.weight.len() != p.dim_f * p.dim_h || p.bias.len() != p.dim_h {
            return Err(Error::Shape("projection".to_string()));
        }
        if self.pat.relation_ids.len() != self.pat.relations.len() {
            return Err(Error::Shape("relation list".to_string()));
        }
        let heads = self.heads();
        for r in &self.pat.relations {
            r.check()?;
            if r.dim_h() != p.dim_h || r.heads() != heads {
                return Err(Error::Shape("relation params disagree with the model".to_string()));
            }
        }
        Ok(())
    }

    /// All trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.projection.weight, &self.projection.bias];
        for r in &self.pat.relations {
            out.extend(r.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.projection.weight, &mut self.projection.bias];
        for r in &mut self.pat.relations {
            out.extend(r.tensors_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|t| linalg::dot(t, t)).sum()
    }

    /// Projected matrices for an entity's background.
    pub fn entity_matrices<E: TextEncoder + ?Sized>(
        &self,
        kb: &KnowledgeBase,
        entity_id: &str,
        encoder: &E,
    ) -> Result<PropertyMatrices> {
        FeatureMatrices::encode(kb.background(entity_id)?, encoder)?.project(&self.projection)
    }

    /// `S` from already projected matrices.
    pub fn score_matrices(
        &self,
        relation_id: &str,
        m1: &PropertyMatrices,
        m2: &PropertyMatrices,
    ) -> Result<f64> {
        let rp = self.pat.get(relation_id)?;
        let h1 = rp.pat_forward(&m1.p, &m1.v)?;
        let h2 = rp.pat_forward(&m2.p, &m2.v)?;
        Ok(rp.score_summaries(&h1, &h2))
    }

    /// `S` for background lists `b1`, `b2` under `relation_id`.
    pub fn score_triple<E: TextEncoder + ?Sized>(
        &self,
        b1: &[PropertyValuePair],
        b2: &[PropertyValuePair],
        relation_id: &str,
        encoder: &E,
    ) -> Result<f64> {
        self.pat.relation_index(relation_id)?;
        let m1 = FeatureMatrices::encode(b1, encoder)?.project(&self.projection)?;
        let m2 = FeatureMatrices::encode(b2, encoder)?.project(&self.projection)?;
        self.score_matrices(relation_id, &m1, &m2)
    }

    /// `-S(e1, r, e2)`: higher means more novel.
    pub fn novelty_score<E: TextEncoder + ?Sized>(
        &self,
        e1: &str,
        relation_id: &str,
        e2: &str,
        kb: &KnowledgeBase,
        encoder: &E,
    ) -> Result<f64> {
        let s = self.score_triple(kb.background(e1)?, kb.background(e2)?, relation_id, encoder)?;
        Ok(-s)
    }

    /// Ranked attention of both entities plus the novelty score.
    pub fn explain<E: TextEncoder + ?Sized>(
        &self,
        e1: &str,
        relation_id: &str,
        e2: &str,
        kb: &KnowledgeBase,
        encoder: &E,
    ) -> Result<AttentionReport> {
        let rp = self.pat.get(relation_id)?;
        let b1 = kb.background(e1)?;
        let b2 = kb.background(e2)?;
        let m1 = FeatureMatrices::encode(b1, encoder)?.project(&self.projection)?;
        let m2 = FeatureMatrices::encode(b2, encoder)?.project(&self.projection)?;
        let a1 = rp.attention_weights(&m1.p)?;
        let a2 = rp.attention_weights(&m2.p)?;
        let s = rp.score_summaries(
            &AttentionTrace::compute(rp, &m1.p, m1.rows).summary(&m1.v, rp.dim_h()),
            &AttentionTrace::compute(rp, &m2.p, m2.rows).summary(&m2.v, rp.dim_h()),
        );
        Ok(AttentionReport {
            relation_id: relation_id.to_string(),
            e1: EntityAttention::rank(e1, b1, &a1),
            e2: EntityAttention::rank(e2, b2, &a2),
            novelty_score: -s,
        })
    }

    /// `S` and its gradient with respect to every trainable tensor, for a
    /// triple given in encoder-feature space.
    pub fn score_with_gradient(
        &self,
        relation_id: &str,
        f1: &FeatureMatrices,
        f2: &FeatureMatrices,
    ) -> Result<(f64, SnsModel)> {
        let mut grads = self.zeros_like();
        let s = self.accumulate_score_gradient(relation_id, f1, f2, 1.0, &mut grads)?;
        Ok((s, grads))
    }

    /// Adds `scale * dS/dtheta` into `grads` and returns `S`.
    pub fn accumulate_score_gradient(
        &self,
        relation_id: &str,
        f1: &FeatureMatrices,
        f2: &FeatureMatrices,
        scale: f64,
        grads: &mut SnsModel,
    ) -> Result<f64> {
        let r = self.pat.relation_index(relation_id)?;
        let rp = &self.pat.relations[r];
        let d = self.dim_h();
        let m1 = f1.project(&self.projection)?;
        let m2 = f2.project(&self.projection)?;
        let t1 = AttentionTrace::compute(rp, &m1.p, m1.rows);
        let t2 = AttentionTrace::compute(rp, &m2.p, m2.rows);
        let h1 = t1.summary(&m1.v, d);
        let h2 = t2.summary(&m2.v, d);
        let s = rp.score_summaries(&h1, &h2);

        let g = &mut grads.pat.relations[r];
        linalg::axpy(&mut g.scorer_weight[..d], scale, &h1);
        linalg::axpy(&mut g.scorer_weight[d..], scale, &h2);
        g.scorer_bias += scale;

        for (trace, m, f, half) in [(&t1, &m1, f1, 0), (&t2, &m2, f2, 1)] {
            let dh: Vec<f64> = rp.scorer_weight[half * d..(half + 1) * d]
                .iter()
                .map(|u| u * scale)
                .collect();
            let mut dp = vec![0.0; m.rows * d];
            let mut dv = vec![0.0; m.rows * d];
            trace.backward(rp, &m.p, &m.v, &dh, &mut grads.pat.relations[r], &mut dp, &mut dv);
            let df = self.dim_f();
            for i in 0..m.rows {
                for (feats, dx) in [(&f.fp, &dp), (&f.fv, &dv)] {
                    let row = &dx[i * d..(i + 1) * d];
                    linalg::axpy(&mut grads.projection.bias, 1.0, row);
                    for (c, &x) in feats[i * df..(i + 1) * df].iter().enumerate() {
                        if x != 0.0 {
                            linalg::axpy(&mut grads.projection.weight[c * d..(c + 1) * d], x, row);
                        }
                    }
                }
            }
        }
        Ok(s)
    }
}

/// One ranked pair in an [`AttentionReport`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankedPair {
    pub pair: PropertyValuePair,
    pub weight: f64,
    /// 1-based.
    pub rank: usize,
    /// Position in the background list.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EntityAttention {
    pub entity_id: String,
    pub ranked: Vec<RankedPair>,
}

impl EntityAttention {
    /// Sorts pairs by weight, descending; ties keep background order.
    pub fn rank(entity_id: &str, pairs: &[PropertyValuePair], weights: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by(|&a, &b| {
            weights[b]
                .partial_cmp(&weights[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let ranked = order
            .into_iter()
            .enumerate()
            .map(|(pos, i)| RankedPair {
                pair: pairs[i].clone(),
                weight: weights[i],
                rank: pos + 1,
                index: i,
            })
            .collect();
        Self {
            entity_id: entity_id.to_string(),
            ranked,
        }
    }

    /// Property ids of the first `top_n` ranked pairs.
    pub fn top_properties(&self, top_n: usize) -> impl Iterator<Item = &str> {
        self.ranked
            .iter()
            .take(top_n)
            .map(|r| r.pair.property_id.as_str())
    }
}

/// Per-entity ranked attention for one scored triple.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionReport {
    pub relation_id: String,
    pub e1: EntityAttention,
    pub e2: EntityAttention,
    pub novelty_score: f64,
}
