use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{BackendError, Completion, Reasoner, ReasonerRequest};

/// Bounded retry with exponential backoff and a total per-call deadline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each further failure.
    pub base_delay: Duration,
    /// Wall-clock budget for the whole call including backoff.
    pub deadline: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            deadline: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, failed_attempts: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(failed_attempts.saturating_sub(1))
    }
}

fn retryable(err: &BackendError) -> bool {
    match err {
        BackendError::Transport(_) => true,
        BackendError::Status { code, .. } => *code == 429 || (500..600).contains(code),
        _ => false,
    }
}

/// Counting gate limiting concurrent in-flight calls.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Client for any chat-completions-compatible endpoint.
#[derive(Debug)]
pub struct HttpReasoner {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    model: String,
    policy: RetryPolicy,
    gate: Gate,
    debug: bool,
}

impl HttpReasoner {
    pub fn new(base_url: &str, api_key: Option<String>, model: &str) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            model: model.to_string(),
            policy: RetryPolicy::default(),
            gate: Gate {
                free: Mutex::new(4),
                cv: Condvar::new(),
            },
            debug: false,
        })
    }

    /// Reads `REASONER_BASE_URL`, `REASONER_API_KEY` and optionally `REASONER_MODEL`.
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var("REASONER_BASE_URL")
            .map_err(|_| BackendError::Config("REASONER_BASE_URL is not set".into()))?;
        let key = std::env::var("REASONER_API_KEY").ok().filter(|k| !k.is_empty());
        let model = std::env::var("REASONER_MODEL").unwrap_or_else(|_| "default".into());
        Self::new(&base, key, &model)
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.gate = Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        };
        self
    }

    pub fn with_debug(mut self, debug: bool) -> Self {
        self.debug = debug;
        self
    }

    fn body(&self, req: &ReasonerRequest) -> Value {
        // Clip payloads are already rendered into the prompt text.
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, url: &str, body: &Value, timeout: Duration) -> Result<String, BackendError> {
        let mut rb = self.client.post(url).timeout(timeout).json(body);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Transport(format!("timed out: {e}"))
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let code = resp.status().as_u16();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if self.debug {
            log::debug!("POST {url} -> {code}: {text}");
        }
        if !(200..300).contains(&code) {
            return Err(BackendError::Status { code, body: text });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| BackendError::Reply(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Reply("missing choices[0].message.content".into()))
    }
}

impl Reasoner for HttpReasoner {
    fn complete(&self, req: &ReasonerRequest) -> Result<Completion, BackendError> {
        let _slot = self.gate.acquire();
        let url = format!("{}/chat/completions", self.base_url);
        let body = self.body(req);
        if self.debug {
            let auth = if self.api_key.is_some() { "Bearer [redacted]" } else { "none" };
            log::debug!("POST {url} (authorization: {auth}): {body}");
        }
        let start = Instant::now();
        let mut attempts = 0;
        loop {
            let remaining = self.policy.deadline.saturating_sub(start.elapsed());
            if remaining.is_zero() {
                return Err(BackendError::Timeout { attempts });
            }
            attempts += 1;
            let err = match self.attempt(&url, &body, remaining) {
                Ok(text) => return Ok(Completion { text, attempts }),
                Err(e) => e,
            };
            log::warn!("{} call attempt {attempts} failed: {err}", req.template);
            if !retryable(&err) || attempts >= self.policy.max_attempts {
                return Err(err);
            }
            let wait = self.policy.delay(attempts);
            if start.elapsed() + wait >= self.policy.deadline {
                return Err(BackendError::Timeout { attempts });
            }
            std::thread::sleep(wait);
        }
    }
}
