//! Top-k passage retrieval: a built-in BM25 index and a remote retriever
//! speaking a small JSON protocol.

mod bm25;
mod remote;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{Bm25Index, Bm25Params, IndexStats};
pub use remote::{RemoteHit, RemoteHits, RemoteRetriever, RetrieveRequest, RetrieveResponse};
pub use store::PassageStore;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot build an index from an empty passage set")]
    EmptyIndex,
    #[error("no indexable tokens in {0} passage(s)")]
    NoTokens(usize),
    #[error("retrieval unavailable: {0}")]
    Unavailable(String),
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub passage_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

pub trait Retriever: Send + Sync {
    /// At most `k` results, ranks `1..=n`, scores non-increasing.
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError>;
}

impl<R: Retriever + ?Sized> Retriever for &R {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        (**self).retrieve(query, k)
    }
}

/// Checks the ranking invariants of one result list.
pub fn is_well_ranked(results: &[RetrievalResult]) -> bool {
    results.iter().enumerate().all(|(i, r)| r.rank == i + 1)
        && results.windows(2).all(|w| w[0].score >= w[1].score)
}
