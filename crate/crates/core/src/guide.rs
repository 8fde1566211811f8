//! The book chapters under `book/src`, compiled as doc-tests so the guide
//! cannot drift from the API.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}
#[doc = include_str!("../../../book/src/corpus.md")]
mod corpus {}
#[doc = include_str!("../../../book/src/retrieval.md")]
mod retrieval {}
#[doc = include_str!("../../../book/src/prompts.md")]
mod prompts {}
#[doc = include_str!("../../../book/src/synthesis.md")]
mod synthesis {}
#[doc = include_str!("../../../book/src/blending.md")]
mod blending {}
#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
