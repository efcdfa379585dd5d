//! BM25 inverted index with top-n ranked retrieval.
//!
//! Scores use the non-negative (Lucene-style) idf
//! `ln(1 + (N - df + 0.5) / (df + 0.5))`, so every score is `>= 0` and a
//! score threshold has a well-defined meaning. Documents that score zero are
//! never returned; ties are broken by ascending document id, which is
//! insertion order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty collection")]
    EmptyCollection,
    #[error("invalid BM25 parameters: {0}")]
    Params(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), IndexError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(IndexError::Params(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(IndexError::Params(format!("b must be in [0,1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc_id: usize,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMemory<P> {
    pub doc_id: usize,
    pub score: f64,
    pub payload: P,
}

/// Build-once inverted index. `P` is whatever the caller wants back with a
/// hit (a memory reference, a row id, ...).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index<P> {
    params: Bm25Params,
    doc_count: usize,
    avg_doc_len: f64,
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    payloads: Vec<P>,
}

impl<P: Clone> Bm25Index<P> {
    /// Indexes `docs` in order; document ids are `0..docs.len()`.
    pub fn build<I, S>(docs: I, params: Bm25Params) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (P, S)>,
        S: AsRef<str>,
    {
        params.validate()?;
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::new();
        let mut payloads = Vec::new();
        let mut total_len: u64 = 0;
        for (doc_id, (payload, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text.as_ref());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens.iter() {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { doc_id, tf: count });
            }
            total_len += tokens.len() as u64;
            doc_lengths.push(tokens.len() as u32);
            payloads.push(payload);
        }
        if total_len == 0 {
            return Err(IndexError::EmptyCollection);
        }
        for list in postings.values_mut() {
            list.sort_by_key(|p| p.doc_id);
        }
        let doc_count = doc_lengths.len();
        Ok(Bm25Index {
            params,
            doc_count,
            avg_doc_len: total_len as f64 / doc_count as f64,
            postings,
            doc_lengths,
            payloads,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, doc_id: usize) -> u32 {
        self.doc_lengths[doc_id]
    }

    pub fn payload(&self, doc_id: usize) -> &P {
        &self.payloads[doc_id]
    }

    pub fn payloads(&self) -> &[P] {
        &self.payloads
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores every matching document and returns up to `n` hits.
    pub fn top_n(&self, query: &str, n: usize) -> Vec<ScoredMemory<P>> {
        if n == 0 {
            return Vec::new();
        }
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for p in list {
                let tf = f64::from(p.tf);
                let dl = f64::from(self.doc_lengths[p.doc_id]);
                let norm = k1 * (1.0 - b + b * dl / self.avg_doc_len);
                *scores.entry(p.doc_id).or_insert(0.0) += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(n);
        ranked
            .into_iter()
            .map(|(doc_id, score)| ScoredMemory {
                doc_id,
                score,
                payload: self.payloads[doc_id].clone(),
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot<P> {
    version: u32,
    index: Bm25Index<P>,
}

impl<P: Clone + Serialize + DeserializeOwned> Bm25Index<P> {
    pub fn save_snapshot(&self, path: &Path) -> Result<(), IndexError> {
        let snap = Snapshot {
            version: SNAPSHOT_VERSION,
            index: self.clone(),
        };
        let body = serde_json::to_string(&snap).map_err(|e| IndexError::Snapshot(e.to_string()))?;
        fs::write(path, body).map_err(|e| IndexError::Snapshot(e.to_string()))
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, IndexError> {
        let raw = fs::read_to_string(path).map_err(|e| IndexError::Snapshot(e.to_string()))?;
        let snap: Snapshot<P> = serde_json::from_str(&raw).map_err(|e| IndexError::Snapshot(e.to_string()))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(IndexError::Snapshot(format!(
                "unsupported snapshot version {}",
                snap.version
            )));
        }
        Ok(snap.index)
    }
}
