//! Versioned binary checkpoints for the scorer and the relation classifier.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` header length, a JSON
//! header (shapes, relation list, encoder, training config), the parameter
//! tensors as little-endian `f64`, and a CRC-32 of all preceding bytes.
//! Values are stored by bit pattern, so a load reproduces the saved model
//! exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use patsnd_core::{ClassifierModel, SnsModel, TrainConfig};

use crate::atomic::write_bytes;
use crate::encoders::EncoderSpec;
use crate::error::{IoError, IoResult};

pub const MODEL_MAGIC: &[u8; 8] = b"PATSNDCK";
pub const CLASSIFIER_MAGIC: &[u8; 8] = b"PATSNDRC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Bounds-checked little-endian reader over a whole file, verifying the
/// trailing checksum up front.
pub(crate) struct Reader<'a> {
    path: PathBuf,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, format version and checksum, in that order, and
    /// positions the reader after the version field.
    pub(crate) fn open(path: &Path, bytes: &'a [u8], magic: &[u8; 8], version: u32) -> IoResult<Self> {
        if bytes.len() < 16 {
            return Err(IoError::corrupt(path, "file too short"));
        }
        if &bytes[..8] != magic {
            return Err(IoError::corrupt(path, "wrong file type"));
        }
        let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if found != version {
            return Err(IoError::IncompatibleCheckpoint {
                path: path.to_path_buf(),
                found,
                expected: version,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(IoError::corrupt(path, "checksum mismatch"));
        }
        Ok(Self {
            path: path.to_path_buf(),
            bytes: body,
            pos: 12,
        })
    }

    fn take(&mut self, n: usize) -> IoResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IoError::corrupt(&self.path, "unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> IoResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> IoResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> IoResult<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| IoError::corrupt(&self.path, "size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn fill(&mut self, dst: &mut [f64]) -> IoResult<()> {
        let values = self.f64s(dst.len())?;
        dst.copy_from_slice(&values);
        Ok(())
    }

    fn header<T: for<'de> Deserialize<'de>>(&mut self) -> IoResult<T> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        serde_json::from_slice(raw).map_err(|e| IoError::corrupt(&self.path, e))
    }

    pub(crate) fn finish(self) -> IoResult<()> {
        if self.pos != self.bytes.len() {
            return Err(IoError::corrupt(&self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn encode_file<H: Serialize>(magic: &[u8; 8], header: &H, tensors: &[&[f64]]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("checkpoint header serializes");
    let floats: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(20 + header.len() + 8 * floats);
    out.extend_from_slice(magic);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        for x in t.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    dim_f: usize,
    dim_h: usize,
    heads: usize,
    relation_ids: Vec<String>,
    encoder: EncoderSpec,
    config: TrainConfig,
}

/// A trained scorer together with what is needed to use it again.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SnsModel,
    pub encoder: EncoderSpec,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ModelHeader {
            dim_f: self.model.dim_f(),
            dim_h: self.model.dim_h(),
            heads: self.model.heads(),
            relation_ids: self.model.relation_ids().to_vec(),
            encoder: self.encoder.clone(),
            config: self.config.clone(),
        };
        encode_file(MODEL_MAGIC, &header, &self.model.tensors())
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> IoResult<Self> {
        let mut r = Reader::open(path, bytes, MODEL_MAGIC, CHECKPOINT_VERSION)?;
        let h: ModelHeader = r.header()?;
        if h.dim_f == 0 || h.dim_h == 0 || h.heads == 0 || h.relation_ids.is_empty() {
            return Err(IoError::corrupt(path, "degenerate model shape"));
        }
        let expected = (h.dim_f + 1) * h.dim_h
            + h.relation_ids.len() * (h.heads * (h.dim_h + 1) + 2 * h.dim_h + 1);
        if expected.saturating_mul(8) > bytes.len() {
            return Err(IoError::corrupt(path, "unexpected end of file"));
        }
        let mut model = SnsModel::zeros(h.dim_f, h.dim_h, h.heads, h.relation_ids);
        for t in model.tensors_mut() {
            r.fill(t)?;
        }
        r.finish()?;
        model.validate().map_err(|e| IoError::data(path, e))?;
        Ok(Self {
            model,
            encoder: h.encoder,
            config: h.config,
        })
    }

    pub fn save(&self, path: &Path) -> IoResult<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> IoResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassifierHeader {
    dim_f: usize,
    relation_ids: Vec<String>,
    encoder: EncoderSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierCheckpoint {
    pub model: ClassifierModel,
    pub encoder: EncoderSpec,
}

impl ClassifierCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ClassifierHeader {
            dim_f: self.model.dim_f,
            relation_ids: self.model.relation_ids.clone(),
            encoder: self.encoder.clone(),
        };
        encode_file(CLASSIFIER_MAGIC, &header, &[&self.model.weight, &self.model.bias])
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> IoResult<Self> {
        let mut r = Reader::open(path, bytes, CLASSIFIER_MAGIC, CHECKPOINT_VERSION)?;
        let h: ClassifierHeader = r.header()?;
        if h.relation_ids.is_empty() || h.dim_f.saturating_mul(h.relation_ids.len()).saturating_mul(8) > bytes.len() {
            return Err(IoError::corrupt(path, "classifier shape does not match file size"));
        }
        let mut model = ClassifierModel::zeros(h.relation_ids, h.dim_f);
        r.fill(&mut model.weight)?;
        r.fill(&mut model.bias)?;
        r.finish()?;
        model.validate().map_err(|e| IoError::data(path, e))?;
        Ok(Self {
            model,
            encoder: h.encoder,
        })
    }

    pub fn save(&self, path: &Path) -> IoResult<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> IoResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut rng = patsnd_core::seeded_rng(4);
        Checkpoint {
            model: SnsModel::random(6, 4, 2, vec!["P161".into(), "P84".into()], &mut rng),
            encoder: EncoderSpec::Fallback { dim: 6, seed: 9 },
            config: TrainConfig {
                dim_h: 4,
                heads: 2,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.model.tensors().iter().zip(ck.model.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, IoError::IncompatibleCheckpoint { found: 2, expected: 1, .. }), "{err}");
    }

    #[test]
    fn every_truncation_and_bit_flip_is_rejected() {
        let bytes = sample().to_bytes();
        let path = Path::new("m.ckpt");
        for cut in [0, 5, 16, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(path, &bytes[..cut]).is_err(), "cut {cut}");
        }
        for at in (12..bytes.len()).step_by(7) {
            let mut b = bytes.clone();
            b[at] ^= 0x10;
            assert!(Checkpoint::from_bytes(path, &b).is_err(), "flip {at}");
        }
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(Checkpoint::from_bytes(path, &b).is_err());
    }

    #[test]
    fn classifier_round_trip() {
        let mut model = ClassifierModel::zeros(vec!["a".into(), "b".into(), "c".into()], 5);
        for (i, w) in model.weight.iter_mut().enumerate() {
            *w = (i as f64).sin();
        }
        model.bias = vec![0.1, -0.2, 0.3];
        let ck = ClassifierCheckpoint {
            model,
            encoder: EncoderSpec::Pretrained { dim: 5 },
        };
        let bytes = ck.to_bytes();
        assert_eq!(ClassifierCheckpoint::from_bytes(Path::new("c"), &bytes).unwrap(), ck);
        assert!(Checkpoint::from_bytes(Path::new("c"), &bytes).is_err());
    }
}
