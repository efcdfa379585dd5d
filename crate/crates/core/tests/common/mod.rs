//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's scoring or graph
//! code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// Brute-force Okapi BM25 with the non-negative idf
/// `ln(1 + (N - df + 0.5) / (df + 0.5))`. Every query token contributes,
/// duplicates included. Returns `(doc, score)` for positive scores, best
/// first, ties by doc number.
pub fn bm25_oracle(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<(usize, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let df: BTreeMap<&String, f64> = query
        .iter()
        .map(|q| (q, docs.iter().filter(|doc| doc.contains(q)).count() as f64))
        .collect();
    let mut out = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        let dl = doc.len() as f64;
        let mut score = 0.0;
        for q in query {
            let tf = doc.iter().filter(|t| *t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = df[q];
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if score > 0.0 {
            out.push((d, score));
        }
    }
    out.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    out
}

pub fn random_words(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<String> {
    (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
}

pub fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Components of size >= 2 of the `cos >= delta` graph, by Warshall
/// transitive closure.
#[allow(clippy::needless_range_loop)]
pub fn components_oracle(vectors: &[Vec<f64>], delta: f64) -> BTreeSet<BTreeSet<usize>> {
    let n = vectors.len();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if i != j && oracle_cosine(&vectors[i], &vectors[j]) >= delta {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut groups = BTreeSet::new();
    for i in 0..n {
        let g: BTreeSet<usize> = (0..n).filter(|&j| reach[i][j]).collect();
        if g.len() >= 2 {
            groups.insert(g);
        }
    }
    groups
}

/// Clustered non-zero vectors so that every threshold of interest yields a
/// mix of edges and non-edges.
pub fn random_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = (0..rng.gen_range(1..=6))
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let c = &centers[rng.gen_range(0..centers.len())];
            let noise = rng.gen_range(0.0..1.2);
            let mut v: Vec<f64> = c.iter().map(|x| x + noise * rng.gen_range(-1.0..1.0)).collect();
            if v.iter().all(|x| *x == 0.0) {
                v[0] = 1.0;
            }
            v
        })
        .collect()
}

/// Replaces every latency field with zero so that two runs compare
/// byte-for-byte.
pub fn zero_latencies(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, x) in map.iter_mut() {
                if k.contains("latency") {
                    *x = Value::from(0.0);
                } else {
                    zero_latencies(x);
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(zero_latencies),
        _ => {}
    }
}

pub fn count_by<T: Ord + Clone>(xs: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for x in xs {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}
