//! Dataset ingestion: JSONL loading, record-table linearization, vocabulary
//! construction and the binarized token-split format.

mod binary;
mod jsonl;
mod table;
mod vocab;

pub use binary::{read_split, write_split, SPLIT_MAGIC, SPLIT_VERSION};
pub use jsonl::{load_jsonl, parse_jsonl, RawInstance};
pub use table::{linearize_records, RecordTable, RECORD_SEPARATOR};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token ids for one side of an instance.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    /// Ids up to (not including) the first EOS.
    pub fn content(&self) -> &[u32] {
        let end = self.0.iter().position(|&t| t == EOS).unwrap_or(self.0.len());
        &self.0[..end]
    }
}

/// A source/target pair, both encoded and EOS-terminated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub id: u32,
    pub source: TokenSequence,
    pub target: TokenSequence,
}

/// Encodes raw instances with `vocab`. Sources longer than `max_source_len`
/// tokens are truncated before the EOS is appended.
pub fn encode_instances(raw: &[RawInstance], vocab: &Vocabulary, max_source_len: Option<usize>) -> Vec<Instance> {
    raw.iter()
        .map(|r| {
            let mut src: Vec<&str> = r.source.split_whitespace().collect();
            if let Some(max) = max_source_len {
                src.truncate(max);
            }
            Instance {
                id: r.id,
                source: vocab.encode_tokens(src),
                target: vocab.encode(&r.target),
            }
        })
        .collect()
}

/// Ensures ids are `0..n` in order and, if `require_target`, that every
/// target has content before its EOS.
pub fn validate_split(instances: &[Instance], require_target: bool) -> Result<()> {
    for (i, inst) in instances.iter().enumerate() {
        if inst.id as usize != i {
            return Err(Error::invalid(format!("instance ids must be contiguous: position {i} has id {}", inst.id)));
        }
        if require_target && inst.target.content().is_empty() {
            return Err(Error::invalid(format!("instance {i} has an empty target")));
        }
    }
    Ok(())
}
