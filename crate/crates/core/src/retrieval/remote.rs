use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::http::{InFlight, JsonClient, RetryPolicy};

use super::{RetrievalError, RetrievalResult, Retriever};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RetrieveRequest {
    pub query: String,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RemoteHit {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RetrieveResponse {
    pub results: Vec<RemoteHit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteHits {
    pub results: Vec<RetrievalResult>,
    /// Hits whose id does not resolve against the local passage set.
    pub rejected_count: usize,
}

/// Client for an external retriever (e.g. a dense model behind HTTP).
#[derive(Debug, Clone)]
pub struct RemoteRetriever {
    endpoint: String,
    client: JsonClient,
    known: HashSet<String>,
    limiter: InFlight,
}

impl RemoteRetriever {
    pub fn new<I>(
        endpoint: impl Into<String>,
        policy: RetryPolicy,
        known_ids: I,
        max_in_flight: usize,
    ) -> Self
    where
        I: IntoIterator<Item = String>,
    {
        Self {
            endpoint: endpoint.into(),
            client: JsonClient::new(policy),
            known: known_ids.into_iter().collect(),
            limiter: InFlight::new(max_in_flight),
        }
    }

    pub fn remote_retrieve(&self, query: &str, k: usize) -> Result<RemoteHits, RetrievalError> {
        let req = RetrieveRequest {
            query: query.to_owned(),
            k,
        };
        let reply = {
            let _permit = self.limiter.acquire();
            self.client
                .post::<_, RetrieveResponse>(&self.endpoint, None, &req)
                .map_err(|e| RetrievalError::Unavailable(e.to_string()))?
        };
        Ok(validate_hits(reply.body.results, &self.known, k))
    }
}

/// Drop unresolvable ids, restore the ranking order if the server broke it,
/// cap at `k` and renumber ranks.
pub(crate) fn validate_hits(hits: Vec<RemoteHit>, known: &HashSet<String>, k: usize) -> RemoteHits {
    let before = hits.len();
    let mut kept: Vec<RemoteHit> = hits
        .into_iter()
        .filter(|h| known.contains(&h.id) && h.score.is_finite())
        .collect();
    let rejected_count = before - kept.len();
    if rejected_count > 0 {
        warn!(
            rejected_count,
            "remote retriever returned unknown passage ids"
        );
    }
    if kept.windows(2).any(|w| w[0].score < w[1].score) {
        warn!("remote results not sorted by score; re-sorting");
        kept.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    }
    kept.truncate(k);
    let results = kept
        .into_iter()
        .enumerate()
        .map(|(i, h)| RetrievalResult {
            passage_id: h.id,
            score: h.score,
            rank: i + 1,
        })
        .collect();
    RemoteHits {
        results,
        rejected_count,
    }
}

impl Retriever for RemoteRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        Ok(self.remote_retrieve(query, k)?.results)
    }
}
