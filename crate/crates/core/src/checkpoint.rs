//! Self-describing model checkpoints.
//!
//! ```text
//! "UAVC"            4 bytes magic
//! version           u32 (currently 1)
//! seed              u64
//! config length     u32, followed by the model config as JSON
//! tensor count      u32
//! tensor*:
//!   name length     u32, followed by UTF-8 name
//!   ndim            u32, followed by ndim u32 dims
//!   precision       u8  (8 = f64, 4 = f32)
//!   payload         prod(dims) little-endian floats
//! ```
//!
//! Tensors are written in name order, so equal models give equal bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binio::{u32_of, Reader};
use crate::config::ModelConfig;
use crate::error::{Result, UavmError};
use crate::model::Uavm;
use crate::params::{hex_string, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"UAVC";
pub const VERSION: u32 = 1;

pub fn encode(model: &Uavm) -> Result<Vec<u8>> {
    encode_parts(model.config(), model.params(), model.seed())
}

/// Encodes without checking that `params` fit `config`.
pub fn encode_parts(config: &ModelConfig, params: &ParamStore, seed: u64) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    let config = serde_json::to_vec(config)?;
    out.extend_from_slice(&u32_of(config.len(), "config length")?.to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&u32_of(params.len(), "tensor count")?.to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&u32_of(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&u32_of(t.shape().len(), "ndim")?.to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&u32_of(d, "dim")?.to_le_bytes());
        }
        out.push(8);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Uavm> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return r.fail(0, "bad magic, expected \"UAVC\"".into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return r.fail(4, format!("unsupported checkpoint version {version}"));
    }
    let seed = r.u64("seed")?;
    let len = r.u32("config length")? as usize;
    let at = r.pos;
    let config: ModelConfig = serde_json::from_slice(r.take(len, "config")?).map_err(|e| UavmError::Parse {
        offset: at,
        message: format!("config record: {e}"),
    })?;
    let count = r.u32("tensor count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let at = r.pos;
        let n = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(n, "tensor name")?)
            .map_err(|_| UavmError::Parse {
                offset: at,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let ndim = r.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u32("dim")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(numel) = numel.filter(|&k| k > 0) else {
            return r.fail(at, format!("tensor `{name}` has invalid shape {shape:?}"));
        };
        let precision = r.u8("precision")?;
        let data: Vec<f64> = match precision {
            8 => r
                .take(numel.saturating_mul(8), "payload")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect(),
            4 => r
                .take(numel.saturating_mul(4), "payload")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
                .collect(),
            other => return r.fail(r.pos - 1, format!("tensor `{name}`: unknown precision byte {other}")),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(UavmError::NumericInput(format!("checkpoint tensor `{name}` holds non-finite values")));
        }
        if params.get(&name).is_some() {
            return r.fail(at, format!("duplicate tensor `{name}`"));
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    if r.remaining() != 0 {
        return r.fail(r.pos, format!("{} trailing bytes after last tensor", r.remaining()));
    }
    Uavm::from_parts(config, params, seed)
}

/// Short content hash identifying a checkpoint.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    hex_string(&Sha256::digest(bytes))[..16].to_string()
}

/// Writes the checkpoint and returns its id.
pub fn save(model: &Uavm, path: impl AsRef<Path>) -> Result<String> {
    let bytes = encode(model)?;
    fs::write(path.as_ref(), &bytes).map_err(|e| UavmError::io(path.as_ref(), e))?;
    Ok(checkpoint_id(&bytes))
}

/// Loads a checkpoint, returning the model and its id.
pub fn load(path: impl AsRef<Path>) -> Result<(Uavm, String)> {
    let bytes = fs::read(path.as_ref()).map_err(|e| UavmError::io(path.as_ref(), e))?;
    let model = decode(&bytes)?;
    Ok((model, checkpoint_id(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Uavm {
        let c = ModelConfig {
            modal_dim: 8,
            shared_dim: 8,
            num_heads: 2,
            seq_len: 4,
            feature_dim: 6,
            num_classes: 3,
            ..ModelConfig::default()
        };
        Uavm::new(c, 5).unwrap()
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let m = tiny();
        let bytes = encode(&m).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        assert_eq!(back.seed(), 5);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = encode(&tiny()).unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(UavmError::Parse { .. })), "cut {cut}");
        }
    }
}
