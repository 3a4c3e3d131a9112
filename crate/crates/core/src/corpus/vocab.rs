use std::collections::HashMap;

use crate::error::{Error, Result};

use super::TokenSequence;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token ↔ id bijection with the four reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in id order. The first four must be the
    /// reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::invalid("vocabulary must start with <pad> <unk> <s> </s>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Whitespace-tokenizes `text`, maps out-of-vocabulary tokens to UNK and appends EOS.
    pub fn encode(&self, text: &str) -> TokenSequence {
        self.encode_tokens(text.split_whitespace())
    }

    pub fn encode_tokens<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> TokenSequence {
        let mut ids: Vec<u32> = tokens.into_iter().map(|t| self.id(t)).collect();
        ids.push(EOS);
        TokenSequence(ids)
    }

    /// Joins tokens with single spaces, stopping at the first EOS.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = Vec::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            let tok = self
                .token(id)
                .ok_or_else(|| Error::invalid(format!("token id {id} outside vocabulary of size {}", self.len())))?;
            out.push(tok);
        }
        Ok(out.join(" "))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.tokens)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_tokens(serde_json::from_str(text)?)
    }
}

/// Keeps the `max_size − 4` most frequent whitespace tokens across all given
/// texts; frequency ties go to the lexicographically smaller token.
pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Vocabulary> {
    if max_size < RESERVED.len() + 1 {
        return Err(Error::invalid(format!("vocabulary size must be at least 5, got {max_size}")));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for text in texts {
        for tok in text.split_whitespace() {
            if !RESERVED.contains(&tok) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED.len());
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocabulary::from_tokens(tokens)
}
