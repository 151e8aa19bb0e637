//! Model providers: live HTTP vendors, record/replay cassettes, and the
//! synthetic author (see [`crate::synthetic`]).

mod cassette;
mod live;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::Decoding;
use crate::condition::TaskCondition;

pub use cassette::{cassette_key, CassetteMode, CassetteProvider};
pub use live::{LiveProvider, Vendor};

/// Run context passed alongside the prompt. Live providers ignore it and it
/// is not part of cassette keys; the synthetic author uses it in place of
/// reading the prompt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RequestHints {
    pub condition: Option<TaskCondition>,
    pub seed: u64,
    /// Constraint ids in presentation order.
    pub presented: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub decoding: Decoding,
    pub hints: RequestHints,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider rejected request: {0}")]
    Fatal(String),
    #[error("missing credentials: environment variable {0} is not set")]
    Credentials(String),
    #[error("no cassette recorded for key {0}")]
    CassetteMiss(String),
    #[error("cassette storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("giving up after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        last: Box<ProviderError>,
    },
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Timeout(_) | ProviderError::Transient(_))
    }
}

pub trait ModelProvider: Send + Sync {
    /// Short name recorded in run metadata.
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 1000,
        }
    }
}

/// Outcome of a retried call: the completion, attempts used, and the errors
/// that triggered retries.
#[derive(Debug)]
pub struct RetriedCompletion {
    pub completion: Completion,
    pub attempts: u32,
    pub retry_log: Vec<String>,
}

/// Calls the provider, retrying retryable failures with exponential backoff.
pub fn complete_with_retry(
    provider: &dyn ModelProvider,
    request: &CompletionRequest,
    policy: RetryPolicy,
) -> Result<RetriedCompletion, ProviderError> {
    let mut retry_log = Vec::new();
    let mut attempt = 0;
    loop {
        attempt += 1;
        match provider.complete(request) {
            Ok(completion) => {
                return Ok(RetriedCompletion {
                    completion,
                    attempts: attempt,
                    retry_log,
                })
            }
            Err(e) if e.is_retryable() && attempt <= policy.max_retries => {
                retry_log.push(format!("attempt {attempt}: {e}"));
                let delay = policy.base_delay_ms.saturating_mul(1 << (attempt - 1).min(16));
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
            Err(e) if e.is_retryable() => {
                return Err(ProviderError::Exhausted {
                    attempts: attempt,
                    last: Box::new(e),
                })
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }

    impl ModelProvider for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _: &CompletionRequest) -> Result<Completion, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(ProviderError::Transient("503".into()))
            } else {
                Ok(Completion {
                    text: "ok".into(),
                    usage: Usage::default(),
                })
            }
        }
    }

    fn request() -> CompletionRequest {
        CompletionRequest {
            model: "m".into(),
            system: "s".into(),
            user: "u".into(),
            decoding: Decoding::default(),
            hints: RequestHints::default(),
        }
    }

    const FAST: RetryPolicy = RetryPolicy {
        max_retries: 3,
        base_delay_ms: 0,
    };

    #[test]
    fn retries_then_succeeds() {
        let p = Flaky {
            failures: 3,
            calls: AtomicU32::new(0),
        };
        let r = complete_with_retry(&p, &request(), FAST).unwrap();
        assert_eq!(r.attempts, 4);
        assert_eq!(r.retry_log.len(), 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let p = Flaky {
            failures: 10,
            calls: AtomicU32::new(0),
        };
        let e = complete_with_retry(&p, &request(), FAST).unwrap_err();
        assert!(matches!(e, ProviderError::Exhausted { attempts: 4, .. }));
        assert_eq!(p.calls.load(Ordering::SeqCst), 4);
    }
}
