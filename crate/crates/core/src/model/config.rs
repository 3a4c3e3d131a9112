use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Precision;

/// Which model is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Attention + copy encoder-decoder with a fixed decoder.
    #[serde(rename = "seq2seq")]
    Seq2seq,
    /// Seq2seq that also attends over, and copies from, the exemplar.
    #[serde(rename = "attexp")]
    AttExp,
    /// Decoder recurrence composed per input from exemplar coefficients.
    #[serde(rename = "adadec")]
    AdaDec,
    #[serde(rename = "adadec+attexp")]
    AdaDecAttExp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Seq2seq, Variant::AttExp, Variant::AdaDec, Variant::AdaDecAttExp];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Seq2seq => "seq2seq",
            Variant::AttExp => "attexp",
            Variant::AdaDec => "adadec",
            Variant::AdaDecAttExp => "adadec+attexp",
        }
    }

    pub fn uses_exemplar(self) -> bool {
        self != Variant::Seq2seq
    }

    pub fn adaptive(self) -> bool {
        matches!(self, Variant::AdaDec | Variant::AdaDecAttExp)
    }

    pub fn attends_exemplar(self) -> bool {
        matches!(self, Variant::AttExp | Variant::AdaDecAttExp)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Elman,
    Lstm,
}

impl CellKind {
    pub fn gate_names(self) -> &'static [&'static str] {
        match self {
            CellKind::Elman => &["h"],
            CellKind::Lstm => &["i", "f", "g", "o"],
        }
    }

    pub fn gates(self) -> usize {
        self.gate_names().len()
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    /// Decoder hidden size `d`.
    pub decoder_hidden: usize,
    /// Number of rank-1 components `r`; defaults to `decoder_hidden`.
    pub rank: Option<usize>,
    pub exemplar_hidden: usize,
    pub cell: CellKind,
    /// Share the embedding table with the output softmax weights.
    pub tie_embeddings: bool,
    pub copy: bool,
    pub init_scale: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 64,
            encoder_hidden: 64,
            encoder_layers: 1,
            decoder_hidden: 64,
            rank: None,
            exemplar_hidden: 32,
            cell: CellKind::Lstm,
            tie_embeddings: true,
            copy: true,
            init_scale: 0.1,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn rank(&self) -> usize {
        self.rank.unwrap_or(self.decoder_hidden)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embedding_dim", self.embedding_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_layers", self.encoder_layers),
            ("decoder_hidden", self.decoder_hidden),
            ("rank", self.rank()),
            ("exemplar_hidden", self.exemplar_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("model.{name} must be positive")));
            }
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::invalid("model.init_scale must be positive"));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub variant: Variant,
    pub vocab_size: usize,
}
