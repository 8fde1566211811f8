//! Self-training data engine for retrieval-augmented QA.
//!
//! Turns an unlabeled domain corpus into loss-masked fine-tuning records:
//! answers are extracted from passages, questions are generated for them,
//! pairs that a retriever cannot round-trip are dropped, and the survivors
//! are blended with general-domain data by ratio. An evaluation harness
//! scores a generator under the same retrieve-then-answer protocol.
//!
//! The guide in `book/` walks through each stage; its snippets are compiled
//! as doc-tests.

pub mod blending;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod generation;
#[cfg(doctest)]
mod guide;
pub mod http;
pub mod retrieval;
pub mod seed;
pub mod synthesis;
pub mod text;
