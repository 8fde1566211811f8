//! Pseudo-label synthesis over an unlabeled corpus: answer extraction,
//! answer-conditioned question generation, claims, multiple choice,
//! round-trip filtering and context assembly.

mod choice;
mod filter;
mod generate;
mod pipeline;
mod types;

pub use choice::{
    check_multiple_choice, make_multiple_choice, multiple_choice_example, CandidatePool,
    TooFewDistractors, LETTERS,
};
pub use filter::{
    assemble, claim_content_tokens, claim_overlap, filter_and_assemble, roundtrip_filter, supports,
    FilterConfig, FilterOutcome,
};
pub use generate::{
    claim_example, extract_answers, generate_claim, generate_short_span, is_sentence_copy,
    parse_candidates, short_span_example, Extraction, Generator, QuestionOutcome,
};
pub use pipeline::{run_stage2, Stage2Output, SynthesisConfig, SynthesisError};
pub use types::{
    CandidateAnswer, ChoiceOption, FilterStatus, Quotas, SynthesisReport, SyntheticExample,
    TaskType, TypeCounters,
};
