//! Blocking client for hosted completion endpoints.
//!
//! Speaks the widely deployed `POST {base}/completions` protocol
//! (`{model, prompt, n, temperature, stop, seed}` in, `{choices: [{text}]}`
//! out) and, with [`ApiStyle::Chat`], the `POST {base}/chat/completions`
//! variant where the prompt travels as a single user message.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{apply_stop_sequences, GenerationError, GenerationRequest, Generator};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "LSR_MCTS_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    Completions,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub api_style: ApiStyle,
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_in_flight: usize,
    pub send_seed: bool,
    pub max_tokens: Option<u32>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".to_string(),
            model: "default".to_string(),
            api_key: None,
            api_style: ApiStyle::Completions,
            request_timeout: Duration::from_secs(120),
            max_retries: 4,
            initial_backoff: Duration::from_millis(500),
            max_in_flight: 8,
            send_seed: true,
            max_tokens: Some(512),
        }
    }
}

impl HttpConfig {
    /// Fills `api_key` from [`API_KEY_ENV`] when unset.
    pub fn with_env_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        self
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("in-flight lock poisoned");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("in-flight lock poisoned");
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("in-flight lock poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpGenerator {
    config: HttpConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl std::fmt::Debug for HttpGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpGenerator")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

impl HttpGenerator {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = InFlight {
            limit: config.max_in_flight.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        };
        Self {
            config,
            agent,
            in_flight,
        }
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.api_style {
            ApiStyle::Completions => format!("{base}/completions"),
            ApiStyle::Chat => format!("{base}/chat/completions"),
        }
    }

    fn body(&self, request: &GenerationRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "n": request.num_samples,
            "temperature": request.temperature,
        });
        match self.config.api_style {
            ApiStyle::Completions => body["prompt"] = json!(request.prompt_text),
            ApiStyle::Chat => body["messages"] = json!([{"role": "user", "content": request.prompt_text}]),
        }
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        if self.config.send_seed {
            body["seed"] = json!(request.seed);
        }
        if let Some(max_tokens) = self.config.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<Vec<String>, GenerationError> {
        let _permit = self.in_flight.acquire();
        let mut req = self
            .agent
            .post(&self.endpoint())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(body)
            .map_err(|e| GenerationError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(Duration::from_secs_f64);
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GenerationError::Transport(e.to_string()))?;
        match status {
            200..=299 => parse_choices(&text, self.config.api_style),
            429 => Err(GenerationError::RateLimited { retry_after }),
            _ => Err(GenerationError::Http {
                status,
                body: text.chars().take(512).collect(),
            }),
        }
    }
}

fn parse_choices(text: &str, style: ApiStyle) -> Result<Vec<String>, GenerationError> {
    let value: Value = serde_json::from_str(text).map_err(|e| GenerationError::MalformedResponse(e.to_string()))?;
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| GenerationError::MalformedResponse("missing choices array".into()))?;
    let texts = choices
        .iter()
        .map(|choice| {
            let field = match style {
                ApiStyle::Completions => choice.get("text"),
                ApiStyle::Chat => choice.get("message").and_then(|m| m.get("content")),
            };
            field
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| GenerationError::MalformedResponse("choice without text".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if texts.is_empty() {
        return Err(GenerationError::MalformedResponse("empty choices array".into()));
    }
    Ok(texts)
}

impl Generator for HttpGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, GenerationError> {
        request.validate()?;
        let body = self.body(request);
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(mut texts) => {
                    texts.truncate(request.num_samples);
                    return Ok(texts
                        .iter()
                        .map(|t| apply_stop_sequences(t, &request.stop_sequences))
                        .collect());
                }
                Err(err) if err.is_retryable() && attempt < self.config.max_retries => {
                    let wait = match &err {
                        GenerationError::RateLimited { retry_after: Some(d) } => *d,
                        _ => backoff,
                    };
                    log::warn!(
                        "generation attempt {} failed ({err}); retrying in {wait:?}",
                        attempt + 1
                    );
                    thread::sleep(wait);
                    backoff = backoff.saturating_mul(2);
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_completion_choices() {
        let texts = parse_choices(r#"{"choices":[{"text":"a"},{"text":"b\nc"}]}"#, ApiStyle::Completions).unwrap();
        assert_eq!(texts, vec!["a", "b\nc"]);
        let chat = parse_choices(
            r#"{"choices":[{"message":{"role":"assistant","content":"x"}}]}"#,
            ApiStyle::Chat,
        )
        .unwrap();
        assert_eq!(chat, vec!["x"]);
    }

    #[test]
    fn malformed_responses_are_typed() {
        for bad in ["not json", "{}", r#"{"choices":[]}"#, r#"{"choices":[{"txt":"a"}]}"#] {
            assert!(matches!(
                parse_choices(bad, ApiStyle::Completions),
                Err(GenerationError::MalformedResponse(_))
            ));
        }
    }

    #[test]
    fn request_body_shape() {
        let g = HttpGenerator::new(HttpConfig {
            model: "m".into(),
            ..HttpConfig::default()
        });
        let req = GenerationRequest {
            prompt_text: "hello".into(),
            num_samples: 3,
            stop_sequences: vec!["\n\n".into()],
            temperature: 0.8,
            seed: 9,
            context: vec![],
            kind: super::super::RequestKind::Expand,
        };
        let body = g.body(&req);
        assert_eq!(body["model"], "m");
        assert_eq!(body["prompt"], "hello");
        assert_eq!(body["n"], 3);
        assert_eq!(body["stop"][0], "\n\n");
        assert_eq!(body["seed"], 9);
        assert!(g.endpoint().ends_with("/v1/completions"));
    }
}
