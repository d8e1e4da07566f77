use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sync::{RateLimiter, RetryPolicy, Semaphore};
use crate::trace::CallRecord;

use super::backend::{BackendError, ChatBackend};
use super::cache::{CachedResponse, ResponseCache};
use super::{ChatMessage, ChatRequest, ChatResponse, FixtureKey, Role, RoleConfig};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("role {0} is not configured")]
    UnknownRole(Role),
    #[error("backend alias {0:?} is not configured")]
    UnknownBackend(String),
    #[error("{source} (after {attempts} attempt(s))")]
    Backend {
        attempts: u32,
        #[source]
        source: BackendError,
    },
}

impl GatewayError {
    pub fn attempts(&self) -> u32 {
        match self {
            GatewayError::Backend { attempts, .. } => *attempts,
            _ => 0,
        }
    }
}

/// Counters since the gateway was built.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub cache_hits: u64,
    pub backend_calls: u64,
    pub failures: u64,
}

#[derive(Default)]
struct Counters {
    requests: AtomicU64,
    cache_hits: AtomicU64,
    backend_calls: AtomicU64,
    failures: AtomicU64,
}

struct BackendSlot {
    backend: Arc<dyn ChatBackend>,
    limiter: RateLimiter,
}

pub struct Gateway {
    roles: BTreeMap<Role, RoleConfig>,
    backends: HashMap<String, BackendSlot>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    in_flight: Semaphore,
    counters: Counters,
}

pub struct GatewayBuilder {
    roles: BTreeMap<Role, RoleConfig>,
    backends: HashMap<String, BackendSlot>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    max_in_flight: usize,
}

impl GatewayBuilder {
    pub fn role(mut self, config: RoleConfig) -> Self {
        self.roles.insert(config.role, config);
        self
    }

    /// Registers `backend` under `alias`, optionally rate limited to
    /// `requests_per_second`.
    pub fn backend(mut self, alias: impl Into<String>, backend: Arc<dyn ChatBackend>, requests_per_second: Option<f64>) -> Self {
        self.backends.insert(
            alias.into(),
            BackendSlot {
                backend,
                limiter: RateLimiter::per_second(requests_per_second),
            },
        );
        self
    }

    pub fn cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n;
        self
    }

    /// Every configured role must point at a registered backend.
    pub fn build(self) -> Result<Gateway, GatewayError> {
        for config in self.roles.values() {
            if !self.backends.contains_key(&config.backend) {
                return Err(GatewayError::UnknownBackend(config.backend.clone()));
            }
        }
        Ok(Gateway {
            roles: self.roles,
            backends: self.backends,
            cache: self.cache,
            retry: self.retry,
            in_flight: Semaphore::new(self.max_in_flight),
            counters: Counters::default(),
        })
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder {
            roles: BTreeMap::new(),
            backends: HashMap::new(),
            cache: None,
            retry: RetryPolicy::default(),
            max_in_flight: 8,
        }
    }

    /// All five roles on one backend with default parameters.
    pub fn single_backend(backend: Arc<dyn ChatBackend>, model: &str) -> GatewayBuilder {
        let mut b = Self::builder().backend("default", backend, None);
        for role in Role::ALL {
            b = b.role(RoleConfig::with_defaults(role, model, "default"));
        }
        b
    }

    pub fn role(&self, role: Role) -> Result<&RoleConfig, GatewayError> {
        self.roles.get(&role).ok_or(GatewayError::UnknownRole(role))
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.counters.requests.load(Ordering::SeqCst),
            cache_hits: self.counters.cache_hits.load(Ordering::SeqCst),
            backend_calls: self.counters.backend_calls.load(Ordering::SeqCst),
            failures: self.counters.failures.load(Ordering::SeqCst),
        }
    }

    /// Builds a request from the role's configured model parameters.
    pub fn request(&self, role: Role, messages: Vec<ChatMessage>, fixture: FixtureKey, sample: u32) -> Result<ChatRequest, GatewayError> {
        let config = self.role(role)?;
        Ok(ChatRequest {
            role,
            backend: config.backend.clone(),
            model: config.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            messages,
            sample,
            fixture,
        })
    }

    /// Cache lookup, then the backend with retries on transient errors.
    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.counters.requests.fetch_add(1, Ordering::SeqCst);
        let key = request.cache_key();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(ChatResponse {
                text: hit.text,
                usage: hit.usage,
                backend: hit.backend,
                cached: true,
                cache_key: key,
            });
        }
        let slot = self
            .backends
            .get(&request.backend)
            .ok_or_else(|| GatewayError::UnknownBackend(request.backend.clone()))?;
        let mut attempts = 0u32;
        let completion = loop {
            attempts += 1;
            let result = {
                let _permit = self.in_flight.acquire();
                slot.limiter.wait();
                self.counters.backend_calls.fetch_add(1, Ordering::SeqCst);
                slot.backend.complete(request)
            };
            match result {
                Ok(c) => break c,
                Err(e) if e.is_retryable() && attempts <= self.retry.max_retries => {
                    log::debug!("{} attempt {attempts} failed: {e}", request.fixture);
                    std::thread::sleep(self.retry.delay(attempts - 1));
                }
                Err(e) => {
                    self.counters.failures.fetch_add(1, Ordering::SeqCst);
                    return Err(GatewayError::Backend { attempts, source: e });
                }
            }
        };
        let payload = CachedResponse {
            text: completion.text,
            usage: completion.usage,
            backend: slot.backend.id().to_string(),
        };
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put(&key, &payload) {
                log::warn!("cache write for {key} failed: {e}");
            }
        }
        Ok(ChatResponse {
            text: payload.text,
            usage: payload.usage,
            backend: payload.backend,
            cached: false,
            cache_key: key,
        })
    }

    /// [`chat`](Self::chat) plus the trace entry describing the call.
    pub fn chat_recorded(&self, request: &ChatRequest) -> (CallRecord, Result<ChatResponse, GatewayError>) {
        let result = self.chat(request);
        (CallRecord::new(request, &result), result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::backend::{Completion, CountingBackend, ScriptedBackend};
    use crate::llm::Usage;
    use std::sync::atomic::AtomicUsize;

    struct Down {
        calls: AtomicUsize,
    }

    impl ChatBackend for Down {
        fn id(&self) -> &str {
            "down"
        }
        fn complete(&self, _: &ChatRequest) -> Result<Completion, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Transport("connection refused".into()))
        }
    }

    struct FlakyOnce {
        calls: AtomicUsize,
    }

    impl ChatBackend for FlakyOnce {
        fn id(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _: &ChatRequest) -> Result<Completion, BackendError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(BackendError::Status {
                    code: 503,
                    body: "busy".into(),
                })
            } else {
                Ok(Completion {
                    text: "ok".into(),
                    usage: Usage::default(),
                })
            }
        }
    }

    fn fast_retry(n: u32) -> RetryPolicy {
        RetryPolicy {
            max_retries: n,
            base_delay_ms: 1,
            max_delay_ms: 2,
        }
    }

    fn key() -> FixtureKey {
        FixtureKey::new(Role::Reader, "q1", "answer")
    }

    #[test]
    fn second_identical_request_is_a_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let mut fx = ScriptedBackend::new("mock");
        fx.insert("reader/q1/answer", "B");
        let counting = Arc::new(CountingBackend::new(fx));
        let gw = Gateway::single_backend(counting.clone(), "m")
            .cache(ResponseCache::open(dir.path()).unwrap())
            .build()
            .unwrap();
        let req = gw.request(Role::Reader, vec![ChatMessage::user("x")], key(), 0).unwrap();
        let first = gw.chat(&req).unwrap();
        let second = gw.chat(&req).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(first.text, second.text);
        assert_eq!(counting.calls(), 1);
        assert_eq!(gw.stats().cache_hits, 1);
    }

    #[test]
    fn down_backend_with_two_retries_makes_three_attempts() {
        let down = Arc::new(Down {
            calls: AtomicUsize::new(0),
        });
        let gw = Gateway::single_backend(down.clone(), "m")
            .retry(fast_retry(2))
            .build()
            .unwrap();
        let req = gw.request(Role::Reader, vec![ChatMessage::user("x")], key(), 0).unwrap();
        let err = gw.chat(&req).unwrap_err();
        assert_eq!(err.attempts(), 3);
        assert_eq!(down.calls.load(Ordering::SeqCst), 3);
        assert_eq!(gw.stats().failures, 1);
    }

    #[test]
    fn transient_failure_is_retried() {
        let flaky = Arc::new(FlakyOnce {
            calls: AtomicUsize::new(0),
        });
        let gw = Gateway::single_backend(flaky.clone(), "m")
            .retry(fast_retry(2))
            .build()
            .unwrap();
        let req = gw.request(Role::Reader, vec![ChatMessage::user("x")], key(), 0).unwrap();
        assert_eq!(gw.chat(&req).unwrap().text, "ok");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn missing_fixture_is_not_retried() {
        let counting = Arc::new(CountingBackend::new(ScriptedBackend::new("mock")));
        let gw = Gateway::single_backend(counting.clone(), "m")
            .retry(fast_retry(5))
            .build()
            .unwrap();
        let req = gw.request(Role::Reader, vec![ChatMessage::user("x")], key(), 0).unwrap();
        let err = gw.chat(&req).unwrap_err();
        assert!(matches!(
            err,
            GatewayError::Backend {
                source: BackendError::MissingFixture(_),
                attempts: 1
            }
        ));
        assert_eq!(counting.calls(), 1);
    }

    #[test]
    fn roles_must_reference_known_backends() {
        let err = Gateway::builder()
            .role(RoleConfig::with_defaults(Role::Reader, "m", "nowhere"))
            .build()
            .err()
            .unwrap();
        assert!(matches!(err, GatewayError::UnknownBackend(a) if a == "nowhere"));
    }

    #[test]
    fn request_carries_role_parameters() {
        let gw = Gateway::single_backend(Arc::new(ScriptedBackend::new("mock")), "m")
            .build()
            .unwrap();
        let req = gw
            .request(Role::Generator, vec![], FixtureKey::new(Role::Generator, "q", "k1"), 0)
            .unwrap();
        assert_eq!(req.temperature, 1.2);
        assert_eq!(req.max_tokens, 256);
        assert!(matches!(
            Gateway::builder().build().unwrap().role(Role::Reader),
            Err(GatewayError::UnknownRole(Role::Reader))
        ));
    }
}
