//! The two generation steps: candidate answers from a passage, then
//! answer-conditioned questions (or, for claim verification, a claim straight
//! from the passage).

use std::collections::HashSet;

use crate::corpus::Passage;
use crate::generation::templates::{fill, CLAIM_QUESTION, CLAIM_SLOT};
use crate::generation::{generate, Backend, GenerationConfig, GenerationError, Polarity, Prompter};
use crate::seed;
use crate::text::{normalize_answer, sentences};

use super::types::{CandidateAnswer, SyntheticExample, TaskType};

/// Backend plus the prompt and sampling settings for one synthesis run.
pub struct Generator<'a> {
    pub backend: &'a dyn Backend,
    pub prompter: Prompter,
    pub answer_cfg: GenerationConfig,
    pub question_cfg: GenerationConfig,
}

impl<'a> Generator<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        Self {
            backend,
            prompter: Prompter::default(),
            answer_cfg: GenerationConfig::answers(),
            question_cfg: GenerationConfig::questions(),
        }
    }

    /// Completion text, or `None` when the backend returned nothing usable.
    fn sample(
        &self,
        messages: &crate::generation::PromptMessages,
        cfg: &GenerationConfig,
        seed: u64,
    ) -> Result<Option<String>, GenerationError> {
        let cfg = cfg.clone().with_seed(seed);
        match generate(messages, &cfg, self.backend) {
            Ok(r) => Ok(Some(r.text)),
            Err(GenerationError::EmptyOutput { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub candidates: Vec<CandidateAnswer>,
    /// Pieces thrown away (not in the passage, duplicate, or empty).
    pub discarded: usize,
}

impl Extraction {
    /// No valid span survived.
    pub fn is_malformed(&self) -> bool {
        self.candidates.is_empty()
    }
}

fn clean_span(piece: &str) -> &str {
    piece.trim_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '.'))
}

/// Parse a semicolon-separated completion into candidate spans of `passage`.
pub fn parse_candidates(passage: &Passage, completion: &str, m_max: usize) -> Extraction {
    let haystack = passage.text.to_lowercase();
    let mut seen = HashSet::new();
    let mut out = Extraction::default();
    for piece in completion.split(';') {
        let span = clean_span(piece);
        let norm = normalize_answer(span);
        let valid = !span.is_empty()
            && !norm.is_empty()
            && haystack.contains(&span.to_lowercase())
            && out.candidates.len() < m_max
            && seen.insert(norm);
        if valid {
            out.candidates.push(CandidateAnswer {
                passage_id: passage.passage_id.clone(),
                span: span.to_owned(),
                ordinal: out.candidates.len(),
            });
        } else if !piece.trim().is_empty() {
            out.discarded += 1;
        }
    }
    out
}

pub fn extract_answers(
    gen: &Generator<'_>,
    passage: &Passage,
    m_max: usize,
    run_seed: u64,
) -> Result<Extraction, GenerationError> {
    let messages = gen.prompter.answer_prompt(passage);
    let s = seed::derive(run_seed, &[&passage.passage_id, "answers"]);
    let text = gen
        .sample(&messages, &gen.answer_cfg, s)?
        .unwrap_or_default();
    Ok(parse_candidates(passage, &text, m_max))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuestionOutcome {
    Question(String),
    /// Still unusable after the single re-sample.
    Malformed,
    /// Verbatim restatement of a passage sentence.
    Copy,
}

/// True when `question` equals some sentence of `passage` after answer
/// normalization.
pub fn is_sentence_copy(passage: &Passage, question: &str) -> bool {
    let q = normalize_answer(question);
    !q.is_empty() && sentences(&passage.text).any(|s| normalize_answer(s) == q)
}

/// Generate a question whose answer is `answer`. A completion that does not
/// end in `?` is re-sampled once.
pub fn generate_short_span(
    gen: &Generator<'_>,
    passage: &Passage,
    answer: &CandidateAnswer,
    run_seed: u64,
    reject_copies: bool,
) -> Result<QuestionOutcome, GenerationError> {
    let messages = gen.prompter.question_prompt(passage, &answer.span);
    let key = format!("{}/{}", answer.passage_id, answer.ordinal);
    for attempt in 0..2u32 {
        let s = seed::derive(run_seed, &[&key, "question", &attempt.to_string()]);
        let Some(text) = gen.sample(&messages, &gen.question_cfg, s)? else {
            continue;
        };
        let q = text.trim();
        if !q.ends_with('?') {
            continue;
        }
        if reject_copies && is_sentence_copy(passage, q) {
            return Ok(QuestionOutcome::Copy);
        }
        return Ok(QuestionOutcome::Question(q.to_owned()));
    }
    Ok(QuestionOutcome::Malformed)
}

/// Short-span example from a question outcome; copies and malformed outcomes
/// come back already dropped.
pub fn short_span_example(answer: &CandidateAnswer, outcome: &QuestionOutcome) -> SyntheticExample {
    let id = format!("{}/short_span/{}", answer.passage_id, answer.ordinal);
    match outcome {
        QuestionOutcome::Question(q) => SyntheticExample::new(
            id,
            TaskType::ShortSpan,
            q.clone(),
            answer.span.clone(),
            &answer.passage_id,
        ),
        _ => SyntheticExample::new(
            id,
            TaskType::ShortSpan,
            String::new(),
            answer.span.clone(),
            &answer.passage_id,
        )
        .malformed(),
    }
}

/// Claim verification example; skips answer extraction entirely.
pub fn generate_claim(
    gen: &Generator<'_>,
    passage: &Passage,
    polarity: Polarity,
    run_seed: u64,
) -> Result<SyntheticExample, GenerationError> {
    let messages = gen.prompter.claim_prompt(passage, polarity);
    let s = seed::derive(run_seed, &[&passage.passage_id, "claim", polarity.word()]);
    let text = gen
        .sample(&messages, &gen.question_cfg, s)?
        .unwrap_or_default();
    Ok(claim_example(passage, polarity, &text))
}

pub fn claim_example(passage: &Passage, polarity: Polarity, completion: &str) -> SyntheticExample {
    let claim = completion.trim().trim_end_matches('.').trim();
    let gold = match polarity {
        Polarity::Supported => "Yes",
        Polarity::Refuted => "No",
    };
    let id = format!("{}/claim", passage.passage_id);
    let mut ex = SyntheticExample::new(
        id,
        TaskType::ClaimVerification,
        fill(CLAIM_QUESTION, CLAIM_SLOT, claim),
        gold.to_owned(),
        &passage.passage_id,
    );
    ex.polarity = Some(polarity);
    if claim.is_empty() {
        ex.question.clear();
        return ex.malformed();
    }
    ex.claim = Some(claim.to_owned());
    ex
}
