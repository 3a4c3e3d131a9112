//! ROUGE-N, ROUGE-L and corpus BLEU over whitespace tokens.
//!
//! Text is lowercased and split on whitespace; the reserved `<pad>`, `<s>`
//! and `</s>` markers are dropped. No stemming, no stopword removal.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::RESERVED;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Prf {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }

    fn ratio(overlap: usize, cand: usize, reference: usize) -> Prf {
        if cand == 0 || reference == 0 {
            return Prf::default();
        }
        Prf::new(overlap as f64 / cand as f64, overlap as f64 / reference as f64)
    }
}

/// Lowercased whitespace tokens with reserved markers removed.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(str::to_lowercase)
        .filter(|t| t != RESERVED[0] && t != RESERVED[2] && t != RESERVED[3])
        .collect()
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap and the two n-gram totals.
fn overlap<T: Eq + Hash>(cand: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    let total = |m: &HashMap<&[T], usize>| m.values().sum();
    (matched, total(&c), total(&r))
}

pub fn rouge_n<T: Eq + Hash>(cand: &[T], reference: &[T], n: usize) -> Prf {
    let (m, c, r) = overlap(cand, reference, n);
    Prf::ratio(m, c, r)
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l<T: Eq>(cand: &[T], reference: &[T]) -> Prf {
    Prf::ratio(lcs_len(cand, reference), cand.len(), reference.len())
}

/// Which ROUGE statistic to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RougeKind {
    N(usize),
    L,
}

/// Recall after truncating the candidate to the reference length.
pub fn rouge_limited_recall<T: Eq + Hash>(cand: &[T], reference: &[T], kind: RougeKind) -> f64 {
    let cut = &cand[..cand.len().min(reference.len())];
    match kind {
        RougeKind::N(n) => rouge_n(cut, reference, n).recall,
        RougeKind::L => rouge_l(cut, reference).recall,
    }
}

/// Corpus BLEU with uniform weights up to `max_n`, no smoothing, and
/// brevity penalty `exp(1 − r/c)` when the candidates are shorter.
pub fn bleu<T: Eq + Hash>(cands: &[Vec<T>], refs: &[Vec<T>], max_n: usize) -> Result<f64> {
    if cands.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} references",
            cands.len(),
            refs.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::invalid("bleu max_n must be at least 1"));
    }
    let mut matched = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in cands.iter().zip(refs) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=max_n {
            let (m, tc, _) = overlap(c, r, n);
            matched[n - 1] += m;
            totals[n - 1] += tc;
        }
    }
    if c_len == 0 || matched.iter().zip(&totals).any(|(m, t)| *m == 0 || *t == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&totals)
        .map(|(m, t)| (*m as f64 / *t as f64).ln())
        .sum::<f64>()
        / max_n as f64;
    let bp = if c_len >= r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    #[default]
    F1,
    LimitedRecall,
}

/// Corpus-level scores. ROUGE precision and recall are averaged over pairs
/// and each F1 is the harmonic mean of those averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mode: ScoreMode,
    pub pairs: usize,
    pub rouge_1: Prf,
    pub rouge_2: Prf,
    pub rouge_4: Prf,
    pub rouge_l: Prf,
    pub bleu: f64,
}

fn mean_prf<T>(cands: &[Vec<T>], refs: &[Vec<T>], f: impl Fn(&[T], &[T]) -> Prf) -> Prf {
    if cands.is_empty() {
        return Prf::default();
    }
    let (mut p, mut r) = (0.0, 0.0);
    for (c, rf) in cands.iter().zip(refs) {
        let s = f(c, rf);
        p += s.precision;
        r += s.recall;
    }
    let n = cands.len() as f64;
    Prf::new(p / n, r / n)
}

/// ROUGE-L over a corpus, averaged as in [`ScoreReport`].
pub fn corpus_rouge_l<T: Eq>(cands: &[Vec<T>], refs: &[Vec<T>]) -> Prf {
    mean_prf(cands, refs, |c, r| rouge_l(c, r))
}

/// Scores each candidate against its reference. In limited-recall mode every
/// candidate is first truncated to its reference's length.
pub fn score_corpus(cands: &[Vec<String>], refs: &[Vec<String>], mode: ScoreMode) -> Result<ScoreReport> {
    if cands.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} references",
            cands.len(),
            refs.len()
        )));
    }
    let cut: Vec<Vec<String>> = cands
        .iter()
        .zip(refs)
        .map(|(c, r)| match mode {
            ScoreMode::F1 => c.clone(),
            ScoreMode::LimitedRecall => c[..c.len().min(r.len())].to_vec(),
        })
        .collect();
    let n = cands.len();
    let mean = |f: &dyn Fn(&[String], &[String]) -> Prf| mean_prf(&cut, refs, f);
    Ok(ScoreReport {
        mode,
        pairs: n,
        rouge_1: mean(&|c, r| rouge_n(c, r, 1)),
        rouge_2: mean(&|c, r| rouge_n(c, r, 2)),
        rouge_4: mean(&|c, r| rouge_n(c, r, 4)),
        rouge_l: mean(&|c, r| rouge_l(c, r)),
        bleu: bleu(&cut, refs, 4)?,
    })
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            ScoreMode::F1 => "f1",
            ScoreMode::LimitedRecall => "limited-length recall",
        };
        writeln!(f, "pairs: {}  mode: {mode}", self.pairs)?;
        writeln!(f, "{:<8} {:>8} {:>8} {:>8}", "", "P", "R", "F1")?;
        for (name, s) in [
            ("ROUGE-1", self.rouge_1),
            ("ROUGE-2", self.rouge_2),
            ("ROUGE-4", self.rouge_4),
            ("ROUGE-L", self.rouge_l),
        ] {
            writeln!(
                f,
                "{name:<8} {:>8.2} {:>8.2} {:>8.2}",
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1
            )?;
        }
        write!(f, "BLEU     {:>8.2}", 100.0 * self.bleu)
    }
}
