//! Prompt rendering and completion backends.

mod backend;
mod mock;
pub mod templates;

pub use backend::{
    generate, Backend, BackendKind, ChatRequest, ChatResponse, Completion, FnBackend,
    GenerationConfig, GenerationError, GenerationResult, RemoteBackend,
};
pub use mock::{capitalized_spans, MockBackend, MockStyle};
pub use templates::{Polarity, PromptMessages, Prompter};
