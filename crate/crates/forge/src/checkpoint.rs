//! CKPT weight files: `"CKPT"`, u32 header length, UTF-8 JSON header, then
//! little-endian f32 tensors in header order.

use std::path::Path;

use cadence_core::model::CastModel;
use cadence_core::nn::{ParamStore, Tensor};
use cadence_core::train::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::error::{invalid, Result};
use crate::formats::{read_file, write_atomic, Reader};

pub const MAGIC: &[u8; 4] = b"CKPT";
pub const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    /// `epoch-N`, `ema`, `swa` or `final`.
    pub tag: String,
    pub epoch: Option<usize>,
    pub val_accuracy: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub experiment: ExperimentConfig,
    pub tensors: Vec<TensorInfo>,
}

/// Header plus values in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub header: CheckpointHeader,
    pub values: Vec<Tensor<f32>>,
}

impl CheckpointFile {
    /// Pairs `values` (a snapshot of `ps`) with the store's names and shapes.
    pub fn new(
        tag: impl Into<String>,
        epoch: Option<usize>,
        val_accuracy: Option<f64>,
        exp: &ExperimentConfig,
        ps: &ParamStore<f32>,
        values: &[Tensor<f32>],
    ) -> Result<Self> {
        if values.len() != ps.len() {
            invalid!("snapshot has {} tensors, store has {}", values.len(), ps.len());
        }
        let tensors = ps
            .entries()
            .iter()
            .zip(values)
            .map(|(e, v)| {
                if e.value.shape != v.shape {
                    invalid!("snapshot shape {:?} does not match {} {:?}", v.shape, e.name, e.value.shape);
                }
                Ok(TensorInfo { name: e.name.clone(), shape: v.shape.clone() })
            })
            .collect::<Result<_>>()?;
        let header = CheckpointHeader {
            format: FORMAT,
            tag: tag.into(),
            epoch,
            val_accuracy,
            seed: exp.train.seed,
            config_hash: config_hash(exp),
            experiment: exp.clone(),
            tensors,
        };
        Ok(Self { header, values: values.to_vec() })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header)?;
        let payload: usize = self.values.iter().map(|t| t.len() * 4).sum();
        let mut out = Vec::with_capacity(8 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        let Ok(n) = u32::try_from(json.len()) else { invalid!("checkpoint header too large") };
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.values {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let n = r.u32("header length")? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(n, "header")?)?;
        if header.format != FORMAT {
            invalid!("unsupported checkpoint format {}", header.format);
        }
        let values = header
            .tensors
            .iter()
            .map(|t| {
                let len = t.shape.iter().product();
                Ok(Tensor::new(&t.shape, r.f32s(len, &t.name)?)?)
            })
            .collect::<Result<_>>()?;
        r.finish()?;
        Ok(Self { header, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?).map_err(|e| match e {
            crate::error::ForgeError::Validation(m) => crate::error::ForgeError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Values reordered to match `ps`, checking every name and shape.
    pub fn values_for(&self, ps: &ParamStore<f32>) -> Result<Vec<Tensor<f32>>> {
        if ps.len() != self.values.len() {
            invalid!("checkpoint has {} tensors, model expects {}", self.values.len(), ps.len());
        }
        ps.entries()
            .iter()
            .map(|e| {
                let Some(i) = self.header.tensors.iter().position(|t| t.name == e.name) else {
                    invalid!("checkpoint lacks tensor {}", e.name)
                };
                if self.values[i].shape != e.value.shape {
                    invalid!("tensor {} has shape {:?}, model expects {:?}", e.name, self.values[i].shape, e.value.shape);
                }
                Ok(self.values[i].clone())
            })
            .collect()
    }

    /// Rebuilds the network described by the header with these weights loaded.
    pub fn instantiate(&self) -> Result<(CastModel, ParamStore<f32>)> {
        let (model, mut ps) = CastModel::build::<f32>(&self.header.experiment.model, 0)?;
        let values = self.values_for(&ps)?;
        ps.load_snapshot(&values)?;
        Ok((model, ps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut e = ExperimentConfig::desk(3);
        e.model.widths = vec![4, 8];
        e.model.fusion.dim = 16;
        e.model.fusion.heads = 2;
        e.model.fusion.ffn_dim = 32;
        e
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let exp = tiny();
        let (_, ps) = CastModel::build::<f32>(&exp.model, 9).unwrap();
        let ck = CheckpointFile::new("epoch-3", Some(3), Some(0.5), &exp, &ps, &ps.snapshot()).unwrap();
        let bytes = ck.encode().unwrap();
        assert_eq!(&bytes[..4], b"CKPT");
        let back = CheckpointFile::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.values.iter().zip(ps.snapshot()) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let (_, loaded) = back.instantiate().unwrap();
        assert_eq!(loaded.snapshot(), ps.snapshot());
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn header_is_json_after_length() {
        let exp = tiny();
        let (_, ps) = CastModel::build::<f32>(&exp.model, 1).unwrap();
        let bytes = CheckpointFile::new("final", None, None, &exp, &ps, &ps.snapshot()).unwrap().encode().unwrap();
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        assert_eq!(header["tag"], "final");
        assert_eq!(header["seed"], 42);
        assert_eq!(header["tensors"].as_array().unwrap().len(), ps.len());
        let floats: usize = ps.entries().iter().map(|e| e.value.len()).sum();
        assert_eq!(bytes.len(), 8 + n + 4 * floats);
    }

    #[test]
    fn rejects_mismatch_and_truncation() {
        let exp = tiny();
        let (_, ps) = CastModel::build::<f32>(&exp.model, 1).unwrap();
        let ck = CheckpointFile::new("final", None, None, &exp, &ps, &ps.snapshot()).unwrap();
        let bytes = ck.encode().unwrap();
        assert!(CheckpointFile::decode(&bytes[..bytes.len() - 4]).is_err());
        assert!(CheckpointFile::decode(b"CKPX\0\0\0\0").is_err());
        let mut other = tiny();
        other.model.widths = vec![4, 16];
        let (_, ps2) = CastModel::build::<f32>(&other.model, 1).unwrap();
        assert!(ck.values_for(&ps2).is_err());
    }
}
