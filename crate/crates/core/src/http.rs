//! Blocking JSON-over-HTTP calls with bounded retries and an in-flight cap.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RetryPolicy {
    /// Extra attempts after the first one.
    pub retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    /// Backoff before attempt `attempt + 1`; doubles from `base_delay_ms`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(
            self.base_delay_ms
                .saturating_mul(factor)
                .min(self.max_delay_ms),
        )
    }
}

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("endpoint unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: u32, last: String },
}

/// Outcome of a successful call: decoded body plus the 1-based attempt that
/// produced it.
#[derive(Debug)]
pub struct Reply<T> {
    pub body: T,
    pub attempt: u32,
}

#[derive(Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    policy: RetryPolicy,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient")
            .field("policy", &self.policy)
            .finish()
    }
}

impl JsonClient {
    pub fn new(policy: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(policy.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, policy }
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    /// Same agent, different retry budget.
    pub fn with_retries(&self, retries: u32) -> Self {
        Self {
            agent: self.agent.clone(),
            policy: RetryPolicy {
                retries,
                ..self.policy.clone()
            },
        }
    }

    /// POST `body` as JSON, retrying transport failures, non-2xx statuses
    /// and undecodable bodies.
    pub fn post<Req, Resp>(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Req,
    ) -> Result<Reply<Resp>, HttpError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let total = self.policy.retries + 1;
        let mut last = String::new();
        for attempt in 1..=total {
            match self.post_once(url, bearer, body) {
                Ok(body) => {
                    if attempt > 1 {
                        debug!(attempt, url, "succeeded after retry");
                    }
                    return Ok(Reply { body, attempt });
                }
                Err(e) => {
                    warn!(attempt, total, url, error = %e, "request failed");
                    last = e;
                    if attempt < total {
                        std::thread::sleep(self.policy.delay(attempt));
                    }
                }
            }
        }
        Err(HttpError::Unavailable {
            attempts: total,
            last,
        })
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Req,
    ) -> Result<Resp, String> {
        let mut req = self.agent.post(url);
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(format!("HTTP {}: {}", status.as_u16(), text.trim()));
        }
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| format!("bad response body: {e}"))
    }
}

/// Counting semaphore bounding concurrent calls to one backend.
#[derive(Debug, Clone)]
pub struct InFlight {
    inner: Arc<(Mutex<usize>, Condvar)>,
    cap: usize,
}

pub struct Permit<'a> {
    owner: &'a InFlight,
}

impl InFlight {
    pub fn new(cap: usize) -> Self {
        Self {
            inner: Arc::new((Mutex::new(0), Condvar::new())),
            cap: cap.max(1),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn acquire(&self) -> Permit<'_> {
        let (lock, cvar) = &*self.inner;
        let mut n = lock.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = cvar.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { owner: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let (lock, cvar) = &*self.owner.inner;
        let mut n = lock.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        cvar.notify_one();
    }
}
