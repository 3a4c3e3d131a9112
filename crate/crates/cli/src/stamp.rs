//! Stage stamps: a digest per stage, chained from upstream digests, so a
//! stage refuses to run on outputs produced under a different config.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stamp {
    pub stage: String,
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greedy: Option<bool>,
}

/// Incremental sha256 over named, length-prefixed JSON fields.
pub struct Digest(Sha256);

impl Digest {
    pub fn new(stage: &str) -> Self {
        let mut d = Digest(Sha256::new());
        d.bytes("stage", stage.as_bytes());
        d
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> &mut Self {
        for part in [name.as_bytes(), bytes] {
            self.0.update((part.len() as u64).to_le_bytes());
            self.0.update(part);
        }
        self
    }

    pub fn field(&mut self, name: &str, value: &impl Serialize) -> Result<&mut Self> {
        let json = serde_json::to_vec(value)?;
        Ok(self.bytes(name, &json))
    }

    pub fn finish(&mut self) -> String {
        hex(&self.0.clone().finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn stamp_path(out: &Path, stage: &str) -> std::path::PathBuf {
    out.join(format!("{stage}.stamp.json"))
}

pub fn write(out: &Path, stamp: &Stamp) -> Result<()> {
    let path = stamp_path(out, &stamp.stage);
    let mut text = serde_json::to_string_pretty(stamp)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read(out: &Path, stage: &str) -> Result<Option<Stamp>> {
    let path = stamp_path(out, stage);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let s: Stamp = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(s))
}

/// Fails unless `stage` has a stamp in `out` whose digest is `expected`.
pub fn require(out: &Path, stage: &str, expected: &str) -> Result<Stamp> {
    match read(out, stage)? {
        None => bail!("`{stage}` has not been run in {}; run `adadec {stage}` first", out.display()),
        Some(s) if s.digest != expected => bail!(
            "`{stage}` outputs in {} are stale for the current config or inputs; re-run `adadec {stage}`",
            out.display()
        ),
        Some(s) => Ok(s),
    }
}
