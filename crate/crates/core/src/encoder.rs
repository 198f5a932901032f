//! Text encoders and the trainable projection into hidden space.
//!
//! Encoders are frozen: they map a string to a pooled feature vector of
//! width `dim_f`. The [`Projection`] is a shared linear layer
//! `dim_f -> dim_h` applied to every property and value vector.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::kb::PropertyValuePair;
use crate::linalg;
use crate::{Error, Result};

/// A frozen pooled text encoder.
///
/// Implementations must be deterministic and return `dim()` finite values.
/// [`encode_pooled`] normalizes and validates around calls to `encode`.
pub trait TextEncoder {
    fn dim(&self) -> usize;

    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

impl<E: TextEncoder + ?Sized> TextEncoder for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        (**self).encode(text)
    }
}

/// Collapses runs of whitespace to single spaces and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Encodes `text` after whitespace normalization and checks the output
/// contract (length `dim`, all finite).
pub fn encode_pooled<E: TextEncoder + ?Sized>(encoder: &E, text: &str) -> Result<Vec<f64>> {
    let normalized = normalize_whitespace(text);
    if normalized.is_empty() {
        return Err(Error::InvalidInput("cannot encode empty text".to_string()));
    }
    let v = encoder.encode(&normalized)?;
    if v.len() != encoder.dim() {
        return Err(Error::Shape(format!(
            "encoder returned {} values, expected {}",
            v.len(),
            encoder.dim()
        )));
    }
    if !linalg::all_finite(&v) {
        return Err(Error::NonFinite("encoder output"));
    }
    Ok(v)
}

/// Offline fallback encoder: a bag of hashed, lowercased character
/// trigrams, each mapped to a fixed pseudo-random direction, summed and
/// L2-normalized.
///
/// The random matrix is never materialized; row `h` is regenerated from a
/// splitmix64 stream keyed by the trigram hash and the seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashedTrigramEncoder {
    dim: usize,
    seed: u64,
}

impl HashedTrigramEncoder {
    pub const DEFAULT_DIM: usize = 768;
    pub const DEFAULT_SEED: u64 = 0x0005_eed0_f7a7;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { dim, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Default for HashedTrigramEncoder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM, Self::DEFAULT_SEED)
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Unseeded 64-bit FNV-1a of the UTF-8 bytes; keys persisted embeddings.
pub fn text_hash(text: &str) -> u64 {
    fnv1a(0, text.as_bytes())
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl TextEncoder for HashedTrigramEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let mut padded = String::with_capacity(text.len() + 2);
        padded.push('#');
        padded.push_str(&text.to_lowercase());
        padded.push('#');
        let chars: Vec<char> = padded.chars().collect();

        let mut out = vec![0.0; self.dim];
        let mut buf = [0u8; 12];
        for window in chars.windows(3) {
            let mut len = 0;
            for c in window {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let mut state = fnv1a(self.seed, &buf[..len]);
            for o in out.iter_mut() {
                // Uniform in [-1, 1).
                let bits = splitmix64(&mut state) >> 11;
                *o += (bits as f64) * (2.0 / (1u64 << 53) as f64) - 1.0;
            }
        }
        let n = linalg::norm(&out);
        if n > 0.0 {
            out.iter_mut().for_each(|v| *v /= n);
        }
        Ok(out)
    }
}

/// Linear map `f -> f W + b` from encoder space (`dim_f`) to hidden space
/// (`dim_h`). `weight` is row-major with one row per input feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub dim_f: usize,
    pub dim_h: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Projection {
    pub fn zeros(dim_f: usize, dim_h: usize) -> Self {
        Self {
            dim_f,
            dim_h,
            weight: vec![0.0; dim_f * dim_h],
            bias: vec![0.0; dim_h],
        }
    }

    /// Uniform in `±1/sqrt(dim_f)`, zero bias.
    pub fn random<R: Rng + ?Sized>(dim_f: usize, dim_h: usize, rng: &mut R) -> Self {
        let scale = 1.0 / libm::sqrt(dim_f as f64);
        let weight = (0..dim_f * dim_h)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Self {
            dim_f,
            dim_h,
            weight,
            bias: vec![0.0; dim_h],
        }
    }

    pub fn from_parts(dim_f: usize, dim_h: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != dim_f * dim_h || bias.len() != dim_h {
            return Err(Error::Shape(format!(
                "projection {dim_f}x{dim_h} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            dim_f,
            dim_h,
            weight,
            bias,
        })
    }

    pub fn apply(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.dim_f {
            return Err(Error::Shape(format!(
                "projection expects {} features, got {}",
                self.dim_f,
                features.len()
            )));
        }
        let mut out = self.bias.clone();
        self.apply_into(features, &mut out);
        Ok(out)
    }

    /// `out += f W`; the caller seeds `out` with the bias.
    pub(crate) fn apply_into(&self, features: &[f64], out: &mut [f64]) {
        for (row, &f) in self.weight.chunks_exact(self.dim_h).zip(features) {
            if f != 0.0 {
                linalg::axpy(out, f, row);
            }
        }
    }
}

/// Projected property and value vectors for one pair.
pub fn encode_pair<E: TextEncoder + ?Sized>(
    pair: &PropertyValuePair,
    encoder: &E,
    projection: &Projection,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = projection.apply(&encode_pooled(encoder, &pair.property_label)?)?;
    let v = projection.apply(&encode_pooled(encoder, &pair.value_text)?)?;
    Ok((p, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        linalg::dot(a, b) / (linalg::norm(a) * linalg::norm(b))
    }

    #[test]
    fn deterministic_and_shaped() {
        let enc = HashedTrigramEncoder::default();
        let a = encode_pooled(&enc, "instance of").unwrap();
        let b = encode_pooled(&enc, "instance of").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 768);
        assert!(a.iter().all(|v| v.is_finite()));
        assert!((linalg::norm(&a) - 1.0).abs() < 1e-12);
        // Whitespace normalization makes these the same input.
        assert_eq!(a, encode_pooled(&enc, "  instance \t of ").unwrap());
    }

    #[test]
    fn distinct_words_are_not_collinear() {
        let enc = HashedTrigramEncoder::default();
        let a = encode_pooled(&enc, "politician").unwrap();
        let b = encode_pooled(&enc, "chess variant").unwrap();
        let c = cosine(&a, &b);
        assert!(c < 0.99, "cosine {c}");
    }

    #[test]
    fn empty_text_rejected() {
        let enc = HashedTrigramEncoder::default();
        assert!(matches!(encode_pooled(&enc, " \n\t"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_projection_gives_zero_vectors() {
        let enc = HashedTrigramEncoder::new(16, 1);
        let proj = Projection::zeros(16, 5);
        let pair = PropertyValuePair::new("P106", "occupation", "politician").unwrap();
        let (p, v) = encode_pair(&pair, &enc, &proj).unwrap();
        assert_eq!(p, vec![0.0; 5]);
        assert_eq!(v, vec![0.0; 5]);
    }

    #[test]
    fn equal_property_labels_give_equal_p() {
        let enc = HashedTrigramEncoder::new(32, 1);
        let proj = Projection::random(32, 8, &mut crate::seeded_rng(4));
        let a = PropertyValuePair::new("P106", "occupation", "politician").unwrap();
        let b = PropertyValuePair::new("P106", "occupation", "actor").unwrap();
        let (pa, va) = encode_pair(&a, &enc, &proj).unwrap();
        let (pb, vb) = encode_pair(&b, &enc, &proj).unwrap();
        assert_eq!(pa, pb);
        assert_ne!(va, vb);
        assert_eq!(pa.len(), 8);
    }

    #[test]
    fn hand_computed_projection() {
        // f = (2, -1); W = [[1, 2, 3], [4, 5, 6]]; b = (0.5, 0, -1)
        // f W = (2 - 4, 4 - 5, 6 - 6) = (-2, -1, 0); + b = (-1.5, -1, -1)
        let proj = Projection::from_parts(
            2,
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![0.5, 0.0, -1.0],
        )
        .unwrap();
        assert_eq!(proj.apply(&[2.0, -1.0]).unwrap(), vec![-1.5, -1.0, -1.0]);
        assert!(matches!(proj.apply(&[1.0]), Err(Error::Shape(_))));
        assert!(Projection::from_parts(2, 3, vec![0.0; 5], vec![0.0; 3]).is_err());
    }
}
