//! `HFCKPT1` checkpoint files: magic, u64 little-endian header length, JSON
//! header, then every tensor's raw little-endian values in declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{layout, Tensor};
use super::{DType, ModelConfig, Parameters, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"HFCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub dtype: DType,
    pub step: u64,
    /// Seeds of every stage that produced these weights, oldest first.
    pub seed_lineage: Vec<u64>,
    pub tensors: Vec<(String, Vec<usize>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: Parameters<T>,
    pub step: u64,
    pub seed_lineage: Vec<u64>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: Parameters<T>, step: u64, seed_lineage: Vec<u64>) -> Self {
        Self { params, step, seed_lineage }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            config: self.params.config.clone(),
            dtype: T::DTYPE,
            step: self.step,
            seed_lineage: self.seed_lineage.clone(),
            tensors: self.params.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(15 + json.len() + self.params.n_elements() * T::DTYPE.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.params.tensors {
            for &x in &t.data {
                x.write_le(&mut out);
            }
        }
        Ok(out)
    }

    /// Decodes a checkpoint, converting the stored dtype to `T` if needed.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |why: &str| Error::format(origin, why);
        if bytes.len() < 15 || &bytes[..7] != MAGIC {
            return Err(bad("missing HFCKPT1 magic"));
        }
        let hlen = u64::from_le_bytes(bytes[7..15].try_into().unwrap()) as usize;
        let body_start = 15usize.checked_add(hlen).ok_or_else(|| bad("header length overflow"))?;
        let header_bytes = bytes.get(15..body_start).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(header_bytes)?;
        header.config.validate()?;
        let expected = layout(&header.config);
        let names: Vec<(String, Vec<usize>)> = expected.iter().map(|(n, s, _)| (n.clone(), s.clone())).collect();
        if names != header.tensors {
            return Err(bad("tensor table does not match config layout"));
        }
        let width = header.dtype.size();
        let total: usize = expected.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
        let body = &bytes[body_start..];
        if body.len() != total * width {
            return Err(bad("tensor payload size mismatch"));
        }
        let mut offset = 0;
        let tensors = expected
            .into_iter()
            .map(|(name, shape, class)| {
                let len: usize = shape.iter().product();
                let raw = &body[offset..offset + len * width];
                offset += len * width;
                let data = raw
                    .chunks_exact(width)
                    .map(|c| match header.dtype {
                        DType::F32 => T::of(f32::read_le(c) as f64),
                        DType::F64 => T::of(f64::read_le(c)),
                    })
                    .collect();
                Tensor { name, shape, class, data }
            })
            .collect();
        let params = Parameters { config: header.config, tensors };
        if !params.is_finite() {
            return Err(bad("non-finite weights"));
        }
        Ok(Self { params, step: header.step, seed_lineage: header.seed_lineage })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_weights() {
        let cfg = ModelConfig { n_layers: 1, n_heads: 2, d_model: 8, d_ff: 16, vocab_size: 11, max_ctx: 12, dropout: 0.0 };
        let ck = Checkpoint::new(Parameters::<f32>::init(&cfg, 3).unwrap(), 42, vec![3, 9]);
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..7], b"HFCKPT1");
        let back = Checkpoint::<f32>::from_bytes(&bytes, Path::new("m")).unwrap();
        assert_eq!(back, ck);
        let wide = Checkpoint::<f64>::from_bytes(&bytes, Path::new("m")).unwrap();
        assert_eq!(wide.params.cast::<f32>(), ck.params);
    }

    #[test]
    fn corrupt_payload_is_rejected() {
        let cfg = ModelConfig { n_layers: 1, n_heads: 1, d_model: 4, d_ff: 4, vocab_size: 5, max_ctx: 4, dropout: 0.0 };
        let ck = Checkpoint::new(Parameters::<f64>::init(&cfg, 0).unwrap(), 0, vec![0]);
        let mut bytes = ck.to_bytes().unwrap();
        bytes.pop();
        assert!(Checkpoint::<f64>::from_bytes(&bytes, Path::new("m")).is_err());
        assert!(matches!(Checkpoint::<f64>::load(Path::new("/nonexistent/x.ckpt")), Err(Error::Missing(_))));
    }
}
