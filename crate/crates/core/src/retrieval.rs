//! Bag-of-words exemplar retrieval.
//!
//! Every query is matched to the training instance whose source has the
//! highest cosine similarity with the query source; that instance's target
//! becomes the query's exemplar. Ties go to the smallest training id. When the
//! queries are the training split itself, an instance may not pick itself.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSequence, RESERVED};
use crate::error::{Error, Result};
use crate::par::Execution;

/// Sparse term-frequency vector, sorted by token id, zero counts never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BowVector {
    entries: Vec<(u32, u32)>,
    sq_norm: u64,
}

impl BowVector {
    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        (self.sq_norm as f64).sqrt()
    }

    pub fn count(&self, token: u32) -> u32 {
        self.entries
            .binary_search_by_key(&token, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    fn from_counts(mut entries: Vec<(u32, u32)>) -> Self {
        entries.retain(|e| e.1 > 0);
        entries.sort_unstable();
        let sq_norm = entries.iter().map(|&(_, c)| (c as u64) * (c as u64)).sum();
        BowVector { entries, sq_norm }
    }

    /// Multiplies every count by `c`.
    pub fn scaled(&self, c: u32) -> Self {
        BowVector::from_counts(self.entries.iter().map(|&(t, n)| (t, n * c)).collect())
    }
}

/// Counts of non-reserved tokens in `source`.
pub fn bow_vector(source: &TokenSequence) -> BowVector {
    let mut ids: Vec<u32> = source
        .ids()
        .iter()
        .copied()
        .filter(|&t| t as usize >= RESERVED.len())
        .collect();
    ids.sort_unstable();
    let mut entries: Vec<(u32, u32)> = Vec::new();
    for t in ids {
        match entries.last_mut() {
            Some(last) if last.0 == t => last.1 += 1,
            _ => entries.push((t, 1)),
        }
    }
    BowVector::from_counts(entries)
}

fn dot(u: &BowVector, v: &BowVector) -> u64 {
    let (mut i, mut j, mut acc) = (0, 0, 0u64);
    while i < u.entries.len() && j < v.entries.len() {
        let (a, b) = (u.entries[i], v.entries[j]);
        match a.0.cmp(&b.0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a.1 as u64 * b.1 as u64;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// `u·v / (‖u‖‖v‖)`, or 0 when either vector is empty.
pub fn cosine(u: &BowVector, v: &BowVector) -> f64 {
    similarity_from_dot(dot(u, v), u, v)
}

fn similarity_from_dot(dot: u64, u: &BowVector, v: &BowVector) -> f64 {
    if u.sq_norm == 0 || v.sq_norm == 0 {
        return 0.0;
    }
    dot as f64 / (u.norm() * v.norm())
}

/// Retrieved exemplar for one query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarAssignment {
    pub id: u32,
    pub exemplar_id: u32,
    pub similarity: f64,
}

/// Inverted index over training sources: token → (training id, count).
pub struct BowIndex {
    docs: Vec<BowVector>,
    postings: Vec<Vec<(u32, u32)>>,
}

impl BowIndex {
    pub fn build(train_sources: &[&TokenSequence]) -> Self {
        let docs: Vec<BowVector> = train_sources.iter().map(|s| bow_vector(s)).collect();
        let max_tok = docs
            .iter()
            .flat_map(|d| d.entries.last().map(|e| e.0 as usize + 1))
            .max()
            .unwrap_or(0);
        let mut postings = vec![Vec::new(); max_tok];
        for (doc_id, d) in docs.iter().enumerate() {
            for &(t, c) in &d.entries {
                postings[t as usize].push((doc_id as u32, c));
            }
        }
        BowIndex { docs, postings }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Best training match for `query`, skipping `exclude` if given.
    ///
    /// Only documents sharing a token with the query are scored; every other
    /// document has similarity 0, so if no candidate scores above 0 the
    /// answer is the smallest admissible id with similarity 0.
    pub fn best_match(&self, query: &BowVector, exclude: Option<u32>) -> Option<(u32, f64)> {
        let mut dots: Vec<u64> = vec![0; self.docs.len()];
        let mut touched: Vec<u32> = Vec::new();
        for &(t, qc) in &query.entries {
            let Some(list) = self.postings.get(t as usize) else { continue };
            for &(doc, c) in list {
                if dots[doc as usize] == 0 {
                    touched.push(doc);
                }
                dots[doc as usize] += qc as u64 * c as u64;
            }
        }
        let mut best: Option<(u32, f64)> = None;
        for &doc in &touched {
            if Some(doc) == exclude {
                continue;
            }
            let sim = similarity_from_dot(dots[doc as usize], query, &self.docs[doc as usize]);
            best = match best {
                Some((b, s)) if s > sim || (s == sim && b < doc) => Some((b, s)),
                _ => Some((doc, sim)),
            };
        }
        match best {
            Some(b) if b.1 > 0.0 => Some(b),
            _ => (0..self.docs.len() as u32).find(|&d| Some(d) != exclude).map(|d| (d, 0.0)),
        }
    }
}

/// Assigns each query its most similar training instance.
///
/// `exclude_self` must be set exactly when `queries` is the training split,
/// so that query `i` cannot retrieve training instance `i`.
pub fn retrieve_exemplars(
    train_sources: &[&TokenSequence],
    queries: &[&TokenSequence],
    exclude_self: bool,
    exec: Execution,
) -> Result<Vec<ExemplarAssignment>> {
    if train_sources.is_empty() {
        return Err(Error::Retrieval("training split is empty".into()));
    }
    if exclude_self && train_sources.len() < 2 {
        return Err(Error::Retrieval("self-excluding retrieval needs at least two training instances".into()));
    }
    if exclude_self && queries.len() != train_sources.len() {
        return Err(Error::Retrieval("self-exclusion requires the queries to be the training split".into()));
    }
    let index = BowIndex::build(train_sources);
    let out = exec.map(queries, |i, q| {
        let exclude = exclude_self.then_some(i as u32);
        let (exemplar_id, similarity) = index.best_match(&bow_vector(q), exclude).expect("non-empty index");
        ExemplarAssignment {
            id: i as u32,
            exemplar_id,
            similarity,
        }
    });
    Ok(out)
}

pub fn write_exemplars(path: impl AsRef<Path>, assignments: &[ExemplarAssignment]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for a in assignments {
        serde_json::to_writer(&mut buf, a)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_exemplars(path: impl AsRef<Path>) -> Result<Vec<ExemplarAssignment>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: ExemplarAssignment = serde_json::from_str(line).map_err(|e| Error::Corpus {
            path: path.display().to_string(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        if a.id as usize != out.len() {
            return Err(Error::Corpus {
                path: path.display().to_string(),
                line: n + 1,
                msg: format!("expected id {}, found {}", out.len(), a.id),
            });
        }
        out.push(a);
    }
    Ok(out)
}
