use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::text::lexical_tokens;

use super::{RetrievalError, RetrievalResult, Retriever};

const FILE_MAGIC: &str = "rag-selftrain-bm25";
const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub passage_count: usize,
    pub avg_doc_len: f64,
    pub vocabulary_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Immutable inverted index over lexical tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_doc_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl Bm25Index {
    pub fn build(passages: &[Passage]) -> Result<Self, RetrievalError> {
        Self::build_with(passages, Bm25Params::default())
    }

    pub fn build_with(passages: &[Passage], params: Bm25Params) -> Result<Self, RetrievalError> {
        if passages.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(passages.len());
        for (doc, p) in passages.iter().enumerate() {
            let tokens = lexical_tokens(&p.text);
            doc_len.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: doc as u32,
                    tf,
                });
            }
        }
        let total: u64 = doc_len.iter().map(|&l| u64::from(l)).sum();
        if total == 0 {
            return Err(RetrievalError::NoTokens(passages.len()));
        }
        Ok(Self {
            params,
            ids: passages.iter().map(|p| p.passage_id.clone()).collect(),
            avg_doc_len: total as f64 / passages.len() as f64,
            doc_len,
            postings,
        })
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            passage_count: self.ids.len(),
            avg_doc_len: self.avg_doc_len,
            vocabulary_size: self.postings.len(),
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// BM25 with `idf = ln((N - df + 0.5) / (df + 0.5) + 1)`, summed over
    /// every query token occurrence. Zero-score passages are left out and
    /// ties go to the smaller passage id.
    pub fn search(&self, query: &str, k: usize) -> Vec<RetrievalResult> {
        let terms = lexical_tokens(query);
        if terms.is_empty() || k == 0 {
            return Vec::new();
        }
        let n = self.ids.len() as f64;
        let Bm25Params { k1, b } = self.params;
        let mut scores = vec![0.0f64; self.ids.len()];
        let mut touched = BTreeSet::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let df = list.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for p in list {
                let tf = f64::from(p.tf);
                let dl = f64::from(self.doc_len[p.doc as usize]);
                let norm = tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avg_doc_len));
                scores[p.doc as usize] += idf * norm;
                touched.insert(p.doc as usize);
            }
        }
        let mut hits: Vec<(usize, f64)> = touched
            .into_iter()
            .map(|d| (d, scores[d]))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        });
        hits.truncate(k);
        hits.into_iter()
            .enumerate()
            .map(|(i, (d, score))| RetrievalResult {
                passage_id: self.ids[d].clone(),
                score,
                rank: i + 1,
            })
            .collect()
    }

    /// Writes a one-line `rag-selftrain-bm25 <version>` header, then JSON.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "{FILE_MAGIC} {FILE_VERSION}")?;
        serde_json::to_writer(&mut w, self).map_err(|e| RetrievalError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(FILE_MAGIC) {
            return Err(RetrievalError::Format(format!(
                "{}: not an index file",
                path.display()
            )));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| RetrievalError::Format("missing format version".into()))?;
        if version != FILE_VERSION {
            return Err(RetrievalError::Format(format!(
                "unsupported index version {version} (expected {FILE_VERSION})"
            )));
        }
        serde_json::from_reader(r).map_err(|e| RetrievalError::Format(e.to_string()))
    }
}

impl Retriever for Bm25Index {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        Ok(self.search(query, k))
    }
}
