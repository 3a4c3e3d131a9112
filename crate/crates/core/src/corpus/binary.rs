//! Binarized split files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "ADTK" | version | instance count
//! per instance: id | source length | source ids… | target length | target ids…
//! ```

use std::path::Path;

use crate::error::{Error, Result};

use super::{Instance, TokenSequence};

pub const SPLIT_MAGIC: &[u8; 4] = b"ADTK";
pub const SPLIT_VERSION: u32 = 1;

pub fn write_split(path: impl AsRef<Path>, instances: &[Instance]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(SPLIT_MAGIC);
    buf.extend_from_slice(&SPLIT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(instances.len() as u32).to_le_bytes());
    for inst in instances {
        buf.extend_from_slice(&inst.id.to_le_bytes());
        for seq in [&inst.source, &inst.target] {
            buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
            for id in seq.ids() {
                buf.extend_from_slice(&id.to_le_bytes());
            }
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_split(&bytes).map_err(|msg| Error::Corpus {
        path: path.display().to_string(),
        line: 0,
        msg,
    })
}

fn decode_split(bytes: &[u8]) -> std::result::Result<Vec<Instance>, String> {
    let mut pos = 0;
    let mut word = || -> std::result::Result<u32, String> {
        let b = bytes.get(pos..pos + 4).ok_or("truncated split file")?;
        pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    if bytes.get(..4) != Some(SPLIT_MAGIC) {
        return Err("not a token split file (bad magic)".into());
    }
    word()?;
    let version = word()?;
    if version != SPLIT_VERSION {
        return Err(format!("unsupported split version {version}"));
    }
    let count = word()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = word()?;
        let mut seqs = [TokenSequence::default(), TokenSequence::default()];
        for seq in &mut seqs {
            let n = word()?;
            seq.0 = (0..n).map(|_| word()).collect::<std::result::Result<_, _>>()?;
        }
        let [source, target] = seqs;
        out.push(Instance { id, source, target });
    }
    if pos != bytes.len() {
        return Err("trailing bytes after last instance".into());
    }
    Ok(out)
}
