//! Binary checkpoint format.
//!
//! ```text
//! "ADAD"  u32 version
//! u32 len, variant tag (UTF-8)
//! u32 len, model spec (JSON)
//! u32 len, config digest (UTF-8)
//! u32 tensor count
//! per tensor: u32 len, name, u32 rank, u64 dims…, u8 dtype (0 = f32, 1 = f64), payload
//! ```
//!
//! All integers and payloads are little-endian, payloads row-major.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec, Variant};
use crate::numerics::{ParamStore, Precision, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ADAD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub config_digest: String,
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

pub fn encode_checkpoint(model: &Model, config_digest: &str) -> Result<Vec<u8>> {
    let spec = model.spec();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_bytes(&mut out, spec.variant.as_str().as_bytes());
    put_bytes(&mut out, serde_json::to_string(spec)?.as_bytes());
    put_bytes(&mut out, config_digest.as_bytes());
    let precision = spec.config.precision;
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.params().iter() {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(precision.dtype_tag());
        for &v in t.data() {
            match precision {
                Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let tag: Variant = r.string()?.parse()?;
    let spec: ModelSpec = serde_json::from_str(&r.string()?)?;
    if spec.variant != tag {
        return Err(Error::Checkpoint(format!(
            "header variant `{tag}` disagrees with spec variant `{}`",
            spec.variant
        )));
    }
    let config_digest = r.string()?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match r.take(1)?[0] {
            0 => r.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            1 => r.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            t => return Err(Error::Checkpoint(format!("unknown dtype tag {t} for `{name}`"))),
        };
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        model: Model::from_params(spec, params)?,
        config_digest,
    })
}

pub fn save_checkpoint(model: &Model, config_digest: &str, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, config_digest)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks it was trained as `expected`.
pub fn load_for_variant(path: &Path, expected: Variant) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.model.spec().variant != expected {
        return Err(Error::VariantMismatch {
            expected: expected.to_string(),
            found: ck.model.spec().variant.to_string(),
        });
    }
    Ok(ck)
}
