//! Round-trip consistency: retrieve with the generated question and keep the
//! example only if the answer shows up in what comes back.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::retrieval::{PassageStore, RetrievalError, RetrievalResult, Retriever};
use crate::text::{contains_lexical, lexical_tokens};

use super::types::{FilterStatus, SyntheticExample, TaskType};

/// Function words ignored when measuring claim overlap.
const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "in", "on", "at", "to", "for", "from", "by",
    "with", "as", "is", "are", "was", "were", "be", "been", "being", "it", "its", "this", "that",
    "these", "those", "not", "no", "can", "do", "does", "did", "has", "have", "had", "which",
    "who", "whom", "what", "there", "their", "they", "than", "then", "into", "also", "true",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub enabled: bool,
    pub k: usize,
    /// Minimum fraction of a claim's content tokens that must appear in one
    /// retrieved passage.
    pub claim_overlap: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            k: 10,
            claim_overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub verdict: FilterStatus,
    pub retrieved: Vec<RetrievalResult>,
}

/// Distinct lexical tokens of a claim minus stopwords.
pub fn claim_content_tokens(claim: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    lexical_tokens(claim)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Fraction of `content` tokens present in `passage_text`.
pub fn claim_overlap(content: &[String], passage_text: &str) -> f64 {
    if content.is_empty() {
        return 0.0;
    }
    let words: HashSet<String> = lexical_tokens(passage_text).into_iter().collect();
    content.iter().filter(|t| words.contains(*t)).count() as f64 / content.len() as f64
}

/// Whether one passage satisfies the keep predicate for `ex`.
pub fn supports(ex: &SyntheticExample, passage_text: &str, cfg: &FilterConfig) -> bool {
    match ex.task_type {
        TaskType::ShortSpan => contains_lexical(passage_text, &ex.gold),
        TaskType::MultipleChoice => ex
            .gold_option_text()
            .is_some_and(|g| contains_lexical(passage_text, g)),
        TaskType::ClaimVerification => {
            let content = claim_content_tokens(ex.claim.as_deref().unwrap_or_default());
            !content.is_empty() && claim_overlap(&content, passage_text) >= cfg.claim_overlap
        }
    }
}

/// False when the keep predicate has nothing to test, e.g. a gold span made
/// only of punctuation.
fn testable(ex: &SyntheticExample) -> bool {
    match ex.task_type {
        TaskType::ShortSpan => !lexical_tokens(&ex.gold).is_empty(),
        TaskType::MultipleChoice => ex
            .gold_option_text()
            .is_some_and(|g| !lexical_tokens(g).is_empty()),
        TaskType::ClaimVerification => ex
            .claim
            .as_deref()
            .is_some_and(|c| !claim_content_tokens(c).is_empty()),
    }
}

pub fn roundtrip_filter(
    ex: &SyntheticExample,
    retriever: &dyn Retriever,
    store: &PassageStore,
    cfg: &FilterConfig,
) -> Result<FilterOutcome, RetrievalError> {
    debug_assert_eq!(ex.filter_status, FilterStatus::Pending);
    if !testable(ex) {
        return Ok(FilterOutcome {
            verdict: FilterStatus::DroppedMalformed,
            retrieved: Vec::new(),
        });
    }
    let retrieved = retriever.retrieve(&ex.question, cfg.k)?;
    let hit = retrieved
        .iter()
        .filter_map(|r| store.get(&r.passage_id))
        .any(|p| supports(ex, &p.text, cfg));
    Ok(FilterOutcome {
        verdict: if hit {
            FilterStatus::Kept
        } else {
            FilterStatus::DroppedNotRetrieved
        },
        retrieved,
    })
}

/// Fill `context_ids` for a kept example, reusing the filter retrieval when
/// it is deep enough.
pub fn assemble(
    mut ex: SyntheticExample,
    retriever: &dyn Retriever,
    filter_k: usize,
    context_budget: usize,
) -> Result<SyntheticExample, RetrievalError> {
    let ids: Vec<String> = if filter_k >= context_budget && !ex.filter_retrieval.is_empty() {
        ex.filter_retrieval
            .iter()
            .take(context_budget)
            .map(|r| r.passage_id.clone())
            .collect()
    } else {
        retriever
            .retrieve(&ex.question, context_budget)?
            .into_iter()
            .map(|r| r.passage_id)
            .collect()
    };
    ex.context_ids = ids;
    Ok(ex)
}

/// Apply the filter (when enabled) and assemble contexts. Returns the example
/// with its final status.
pub fn filter_and_assemble(
    mut ex: SyntheticExample,
    retriever: &dyn Retriever,
    store: &PassageStore,
    cfg: &FilterConfig,
    context_budget: usize,
) -> Result<SyntheticExample, RetrievalError> {
    if ex.filter_status != FilterStatus::Pending {
        return Ok(ex);
    }
    if cfg.enabled {
        let out = roundtrip_filter(&ex, retriever, store, cfg)?;
        ex.filter_status = out.verdict;
        ex.filter_retrieval = out.retrieved;
        if ex.filter_status != FilterStatus::Kept {
            return Ok(ex);
        }
        assemble(ex, retriever, cfg.k, context_budget)
    } else {
        let mut ex = assemble(ex, retriever, 0, context_budget)?;
        ex.filter_status = if ex.context_ids.is_empty() {
            FilterStatus::DroppedNotRetrieved
        } else {
            FilterStatus::Kept
        };
        Ok(ex)
    }
}
