use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{InFlight, JsonClient, RetryPolicy};

use super::templates::PromptMessages;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("generation backend unavailable after {attempts} attempt(s): {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("backend returned an empty completion (attempt {attempt})")]
    EmptyOutput { attempt: u32 },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub seed: Option<u64>,
    pub retries: u32,
}

impl GenerationConfig {
    pub fn answers() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.9,
            max_new_tokens: 128,
            seed: None,
            retries: 3,
        }
    }

    pub fn questions() -> Self {
        Self {
            max_new_tokens: 96,
            ..Self::answers()
        }
    }

    pub fn inference() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_new_tokens: 512,
            seed: None,
            retries: 3,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GenerationError::InvalidConfig(format!(
                "temperature {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenerationError::InvalidConfig(format!(
                "top_p {} not in (0, 1]",
                self.top_p
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(GenerationError::InvalidConfig(
                "max_new_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
    pub attempt: u32,
}

/// Raw completion from a backend; `attempt` is 1-based.
#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub attempt: u32,
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(
        &self,
        messages: &PromptMessages,
        cfg: &GenerationConfig,
    ) -> Result<Completion, GenerationError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn complete(
        &self,
        messages: &PromptMessages,
        cfg: &GenerationConfig,
    ) -> Result<Completion, GenerationError> {
        (**self).complete(messages, cfg)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn complete(
        &self,
        messages: &PromptMessages,
        cfg: &GenerationConfig,
    ) -> Result<Completion, GenerationError> {
        (**self).complete(messages, cfg)
    }
}

/// Run one completion. Whitespace-only output is an error; callers decide
/// whether to re-sample.
pub fn generate<B: Backend + ?Sized>(
    messages: &PromptMessages,
    cfg: &GenerationConfig,
    backend: &B,
) -> Result<GenerationResult, GenerationError> {
    cfg.validate()?;
    let started = Instant::now();
    let c = backend.complete(messages, cfg)?;
    if c.text.trim().is_empty() {
        return Err(GenerationError::EmptyOutput { attempt: c.attempt });
    }
    Ok(GenerationResult {
        text: c.text,
        backend: backend.kind(),
        latency_ms: started.elapsed().as_millis() as u64,
        attempt: c.attempt,
    })
}

#[derive(Debug, Serialize)]
pub struct ChatMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
}

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: Vec<ChatMessage<'a>>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
pub struct ChatChoice {
    pub message: ChatChoiceMessage,
}

#[derive(Debug, Deserialize)]
pub struct ChatChoiceMessage {
    #[serde(default)]
    pub content: Option<String>,
}

/// OpenAI-compatible chat-completion endpoint.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    client: JsonClient,
    limiter: InFlight,
}

impl RemoteBackend {
    /// `url` is the full chat-completions URL. The retry count comes from
    /// each call's [`GenerationConfig`]; `policy` supplies delays and the
    /// per-request timeout.
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        policy: RetryPolicy,
        max_in_flight: usize,
    ) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key,
            client: JsonClient::new(policy),
            limiter: InFlight::new(max_in_flight),
        }
    }
}

impl Backend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn complete(
        &self,
        messages: &PromptMessages,
        cfg: &GenerationConfig,
    ) -> Result<Completion, GenerationError> {
        let req = ChatRequest {
            model: &self.model,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &messages.system,
                },
                ChatMessage {
                    role: "user",
                    content: &messages.user,
                },
            ],
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            max_tokens: cfg.max_new_tokens,
            seed: cfg.seed,
        };
        let _permit = self.limiter.acquire();
        let reply = self
            .client
            .with_retries(cfg.retries)
            .post::<_, ChatResponse>(&self.url, self.api_key.as_deref(), &req)
            .map_err(|crate::http::HttpError::Unavailable { attempts, last }| {
                GenerationError::BackendUnavailable { attempts, last }
            })?;
        let text = reply
            .body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(Completion {
            text,
            attempt: reply.attempt,
        })
    }
}

/// Backend driven by a closure; handy for scripted tests and adapters.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&PromptMessages, &GenerationConfig) -> String + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&PromptMessages, &GenerationConfig) -> String + Send + Sync,
{
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(
        &self,
        messages: &PromptMessages,
        cfg: &GenerationConfig,
    ) -> Result<Completion, GenerationError> {
        Ok(Completion {
            text: (self.f)(messages, cfg),
            attempt: 1,
        })
    }
}
