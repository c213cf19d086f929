//! Live HTTP backend for generic chat-completions endpoints.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::model::Role;

use super::{backoff_delay, ChatRequest, ChatTransport, TransportConfig, TransportError};

/// Client-side token bucket. `poll` either takes a token or reports how
/// long to wait; it never sleeps itself, which keeps it unit-testable.
#[derive(Debug)]
struct TokenBucket {
    capacity: f64,
    tokens: f64,
    refill_per_sec: f64,
    last_refill: Instant,
}

impl TokenBucket {
    fn new(per_minute: u32, now: Instant) -> Self {
        let capacity = f64::from(per_minute);
        TokenBucket {
            capacity,
            tokens: capacity,
            refill_per_sec: capacity / 60.0,
            last_refill: now,
        }
    }

    fn poll(&mut self, now: Instant) -> Result<(), Duration> {
        let elapsed = now
            .saturating_duration_since(self.last_refill)
            .as_secs_f64();
        self.tokens = (self.tokens + elapsed * self.refill_per_sec).min(self.capacity);
        self.last_refill = now;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            Ok(())
        } else {
            let deficit = 1.0 - self.tokens;
            Err(Duration::from_secs_f64(deficit / self.refill_per_sec))
        }
    }
}

/// HTTP chat-completions client with retry, exponential backoff, and a
/// shared client-side rate limiter. Safe for concurrent `send` calls.
pub struct LiveTransport {
    config: TransportConfig,
    client: reqwest::blocking::Client,
    limiter: Option<Mutex<TokenBucket>>,
}

impl LiveTransport {
    pub fn new(config: TransportConfig) -> Result<Self, TransportError> {
        config.validate()?;
        if config.endpoint_url.is_empty() {
            return Err(TransportError::Config(
                "live transport requires endpoint_url".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| TransportError::Config(e.to_string()))?;
        let limiter = match config.rate_limit_per_minute {
            0 => None,
            n => Some(Mutex::new(TokenBucket::new(n, Instant::now()))),
        };
        Ok(LiveTransport {
            config,
            client,
            limiter,
        })
    }

    fn resolve_api_key(&self) -> Result<String, TransportError> {
        std::env::var(&self.config.auth_source).map_err(|_| TransportError::MissingAuth {
            var: self.config.auth_source.clone(),
        })
    }

    fn acquire_rate_slot(&self) {
        let Some(limiter) = &self.limiter else {
            return;
        };
        loop {
            let wait = {
                let mut bucket = limiter.lock().expect("rate limiter lock");
                bucket.poll(Instant::now())
            };
            match wait {
                Ok(()) => return,
                Err(d) => std::thread::sleep(d),
            }
        }
    }

    fn build_body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                json!({
                    "role": match m.role {
                        Role::Operator => "user",
                        Role::Model => "assistant",
                        Role::System => "system",
                    },
                    "content": m.text,
                })
            })
            .collect();
        let mut body = Map::new();
        body.insert("model".into(), Value::String(request.model.name.clone()));
        body.insert("messages".into(), Value::Array(messages));
        body.insert("temperature".into(), json!(request.model.temperature));
        body.insert("top_p".into(), json!(request.model.top_p));
        if let Some(max) = request.max_output_tokens {
            body.insert("max_tokens".into(), json!(max));
        }
        for (k, v) in &request.model.extra_params {
            body.insert(k.clone(), Value::String(v.clone()));
        }
        Value::Object(body)
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: AssistantMessage,
}

#[derive(Deserialize)]
struct AssistantMessage {
    content: String,
}

fn is_retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl ChatTransport for LiveTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        request.validate()?;
        let key = self.resolve_api_key()?;
        let body = self.build_body(request);

        let max_retries = self.config.max_retries;
        let mut last_failure = String::new();

        for attempt in 0..=max_retries {
            if attempt > 0 {
                std::thread::sleep(backoff_delay(self.config.backoff_base(), attempt - 1));
            }
            self.acquire_rate_slot();

            let outcome = self
                .client
                .post(&self.config.endpoint_url)
                .header("Authorization", format!("Bearer {key}"))
                .json(&body)
                .send();

            match outcome {
                Ok(response) => {
                    let status = response.status().as_u16();
                    if response.status().is_success() {
                        let parsed: ChatResponse = response
                            .json()
                            .map_err(|e| TransportError::MalformedResponse(e.to_string()))?;
                        let first = parsed.choices.into_iter().next().ok_or_else(|| {
                            TransportError::MalformedResponse("response has no choices".into())
                        })?;
                        return Ok(first.message.content);
                    }
                    let text = response.text().unwrap_or_default();
                    if !is_retryable_status(status) {
                        return Err(TransportError::Http { status, body: text });
                    }
                    last_failure = format!("HTTP {status}");
                }
                Err(e) => {
                    // Timeouts and connection failures are retryable.
                    last_failure = e.to_string();
                }
            }
        }

        Err(TransportError::RetriesExhausted {
            attempts: max_retries + 1,
            last: last_failure,
        })
    }
}
