use std::path::Path;

use super::{read_bytes, write_atomic, IoError, Reader, Result};
use crate::model::BiPathModel;
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BPCC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A decoded checkpoint: header fields and named tensors in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub digest: u64,
    pub params: Vec<(String, Tensor<f32>)>,
}

pub fn encode_checkpoint(store: &ParamStore<f32>, digest: u64) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + 4 * store.numel());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&digest.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        if !p.value.is_finite() {
            return Err(IoError::NonFinite("checkpoint parameter"));
        }
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| IoError::Invalid(format!("parameter name too long: {}", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.array()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(IoError::BadMagic(magic.to_vec()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let digest = r.u64()?;
    let count = r.u32()?;
    let mut params = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| IoError::Invalid("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut n = 1usize;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            n = n.checked_mul(d).ok_or(IoError::Truncated(bytes.len()))?;
            shape.push(d);
        }
        let data = r.f32s(n)?;
        let t = Tensor::new(shape, data).map_err(|e| IoError::Invalid(e.to_string()))?;
        params.push((name, t));
    }
    r.finish()?;
    Ok(Checkpoint {
        version,
        digest,
        params,
    })
}

pub fn save_checkpoint(model: &BiPathModel<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model.params(), model.config().digest())?)
}

impl Checkpoint {
    /// Copies every tensor into `model` after checking digest, names and shapes.
    pub fn apply(&self, model: &mut BiPathModel<f32>) -> Result<()> {
        let expected = model.config().digest();
        if self.digest != expected {
            return Err(IoError::Digest {
                found: self.digest,
                expected,
            });
        }
        let store = model.params_mut();
        let lookup = |name: &str| self.params.iter().find(|(n, _)| n == name);
        for p in store.iter() {
            let (_, t) = lookup(&p.name).ok_or_else(|| IoError::MissingParam(p.name.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(IoError::ParamShape {
                    name: p.name.clone(),
                    found: t.shape().to_vec(),
                    expected: p.value.shape().to_vec(),
                });
            }
        }
        for (name, _) in &self.params {
            if store.index_of(name).is_none() {
                return Err(IoError::ExtraParam(name.clone()));
            }
        }
        for p in store.iter_mut() {
            p.value = lookup(&p.name).expect("checked above").1.clone();
            p.zero_grad();
        }
        Ok(())
    }
}

pub fn load_checkpoint(model: &mut BiPathModel<f32>, path: &Path) -> Result<()> {
    decode_checkpoint(&read_bytes(path)?)?.apply(model)
}
