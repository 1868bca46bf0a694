//! Blocking client for OpenAI-style chat-completion servers.
//!
//! Wire format: `POST {endpoint}/v1/chat/completions` with
//! `{"model", "messages": [{"role": "user", "content": prompt}], "stream": false}`
//! plus every configured sampling parameter merged into the top level. The
//! reply text is `choices[0].message.content`. Local hosts such as Ollama,
//! llama.cpp and vLLM serve this route.

use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::game::PlayerId;
use crate::prompt::{MalformedReply, PromptKind, RenderedPrompt};

pub const CHAT_PATH: &str = "/v1/chat/completions";
pub const MODELS_PATH: &str = "/v1/models";

pub const ENDPOINT_ENV: &str = "SUPERCOOP_ENDPOINT";
pub const MODEL_ENV: &str = "SUPERCOOP_MODEL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Base URL, e.g. `http://127.0.0.1:11434`.
    pub endpoint: String,
    pub model: String,
    /// Sampling parameters passed through verbatim (temperature, top_p, seed, ...).
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
}

fn default_timeout() -> u64 {
    300
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    500
}

impl ModelConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ModelConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            params: Map::new(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            retry_backoff_ms: default_backoff(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.trim_end_matches('/'), path)
    }
}

/// One request/response attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelExchange {
    pub purpose: PromptKind,
    /// 1-based attempt number for this prompt.
    pub attempt: u32,
    pub request_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    /// Unix milliseconds when the attempt finished.
    pub timestamp_ms: u64,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("backend timed out on all {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("no usable reply after {attempts} attempt(s): {source}")]
    Malformed {
        attempts: u32,
        source: MalformedReply,
    },
    #[error("model agents need a [model] configuration")]
    NotConfigured,
    #[error("request for player {player} failed: {source}")]
    Pair {
        player: PlayerId,
        source: Box<ClientError>,
    },
}

enum AttemptError {
    Timeout,
    Retryable(String),
    Fatal(String),
}

pub fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or_default()
}

/// A shareable handle; clones share the connection pool.
#[derive(Clone, Debug)]
pub struct ModelClient {
    config: ModelConfig,
    agent: ureq::Agent,
}

impl ModelClient {
    pub fn new(config: ModelConfig) -> ModelClient {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        ModelClient { config, agent }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Checks the server answers the model-list route.
    pub fn health_check(&self) -> Result<(), ClientError> {
        let unavailable = |e: String| ClientError::BackendUnavailable {
            attempts: 1,
            last_error: e,
        };
        let resp = self
            .agent
            .get(&self.config.url(MODELS_PATH))
            .call()
            .map_err(|e| unavailable(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(unavailable(format!("status {}", resp.status().as_u16())))
        }
    }

    fn request_body(&self, prompt: &str) -> Value {
        let mut body = Map::new();
        for (k, v) in &self.config.params {
            body.insert(k.clone(), v.clone());
        }
        body.insert("model".into(), json!(self.config.model));
        body.insert(
            "messages".into(),
            json!([{ "role": "user", "content": prompt }]),
        );
        body.insert("stream".into(), json!(false));
        Value::Object(body)
    }

    fn attempt(&self, prompt: &str) -> Result<String, AttemptError> {
        let result = self
            .agent
            .post(&self.config.url(CHAT_PATH))
            .send_json(self.request_body(prompt));
        let mut resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(AttemptError::Timeout),
            Err(e) => return Err(AttemptError::Retryable(e.to_string())),
        };
        let status = resp.status().as_u16();
        let body = match resp.body_mut().read_to_string() {
            Ok(b) => b,
            Err(ureq::Error::Timeout(_)) => return Err(AttemptError::Timeout),
            Err(e) => return Err(AttemptError::Retryable(e.to_string())),
        };
        if status == 429 || status >= 500 {
            return Err(AttemptError::Retryable(format!("status {status}: {body}")));
        }
        if !(200..300).contains(&status) {
            return Err(AttemptError::Fatal(format!("status {status}: {body}")));
        }
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| AttemptError::Retryable(format!("invalid response body: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| AttemptError::Retryable("response has no message content".into()))
    }

    /// Sends `prompt` and returns the raw reply text.
    pub fn complete(
        &self,
        prompt: &RenderedPrompt,
        log: &mut Vec<ModelExchange>,
    ) -> Result<String, ClientError> {
        self.complete_with(prompt, log, |raw| Ok(raw.to_string()))
    }

    /// Sends `prompt` until `parse` accepts a reply, retrying transport
    /// failures and malformed replies alike, up to `max_retries` extra attempts.
    ///
    /// Every attempt is pushed to `log` before its reply is parsed.
    pub fn complete_with<T>(
        &self,
        prompt: &RenderedPrompt,
        log: &mut Vec<ModelExchange>,
        parse: impl Fn(&str) -> Result<T, MalformedReply>,
    ) -> Result<T, ClientError> {
        let attempts = self.config.max_retries + 1;
        let mut timeouts = 0;
        let mut last_error = String::new();
        let mut last_malformed = None;
        for attempt in 1..=attempts {
            if attempt > 1 && self.config.retry_backoff_ms > 0 {
                thread::sleep(Duration::from_millis(self.config.retry_backoff_ms));
            }
            let started = Instant::now();
            let outcome = self.attempt(&prompt.text);
            let mut exchange = ModelExchange {
                purpose: prompt.kind,
                attempt,
                request_text: prompt.text.clone(),
                response_text: None,
                error: None,
                latency_ms: started.elapsed().as_millis() as u64,
                timestamp_ms: unix_millis(),
            };
            match outcome {
                Ok(text) => {
                    exchange.response_text = Some(text.clone());
                    log.push(exchange);
                    match parse(&text) {
                        Ok(value) => return Ok(value),
                        Err(m) => {
                            last_error = m.to_string();
                            last_malformed = Some(m);
                        }
                    }
                }
                Err(AttemptError::Timeout) => {
                    exchange.error = Some("timeout".into());
                    log.push(exchange);
                    timeouts += 1;
                    last_error = "timeout".into();
                    last_malformed = None;
                }
                Err(AttemptError::Retryable(e)) => {
                    exchange.error = Some(e.clone());
                    log.push(exchange);
                    last_error = e;
                    last_malformed = None;
                }
                Err(AttemptError::Fatal(e)) => {
                    exchange.error = Some(e.clone());
                    log.push(exchange);
                    return Err(ClientError::BackendUnavailable {
                        attempts: attempt,
                        last_error: e,
                    });
                }
            }
        }
        if let Some(source) = last_malformed {
            return Err(ClientError::Malformed { attempts, source });
        }
        if timeouts == attempts {
            return Err(ClientError::Timeout { attempts });
        }
        Err(ClientError::BackendUnavailable {
            attempts,
            last_error,
        })
    }

    /// Both players' prompts of one round, in flight at the same time.
    ///
    /// Neither reply is visible before both have returned.
    pub fn complete_pair(
        &self,
        players: [PlayerId; 2],
        prompts: [&RenderedPrompt; 2],
    ) -> Result<([String; 2], [Vec<ModelExchange>; 2]), ClientError> {
        let ([r0, r1], logs) = dispatch_pair(
            |log: &mut Vec<ModelExchange>| self.complete(prompts[0], log),
            |log: &mut Vec<ModelExchange>| self.complete(prompts[1], log),
        );
        let tag = |player, e| ClientError::Pair {
            player,
            source: Box::new(e),
        };
        let r0 = r0.map_err(|e| tag(players[0], e))?;
        let r1 = r1.map_err(|e| tag(players[1], e))?;
        Ok(([r0, r1], logs))
    }
}

type PairOutcome<T, E> = ([Result<T, E>; 2], [Vec<ModelExchange>; 2]);

/// Runs two jobs concurrently and joins both before returning.
pub fn dispatch_pair<T, E, F0, F1>(first: F0, second: F1) -> PairOutcome<T, E>
where
    T: Send,
    E: Send,
    F0: FnOnce(&mut Vec<ModelExchange>) -> Result<T, E> + Send,
    F1: FnOnce(&mut Vec<ModelExchange>) -> Result<T, E> + Send,
{
    thread::scope(|s| {
        let h0 = s.spawn(move || {
            let mut log = Vec::new();
            let r = first(&mut log);
            (r, log)
        });
        let h1 = s.spawn(move || {
            let mut log = Vec::new();
            let r = second(&mut log);
            (r, log)
        });
        let (r0, l0) = h0.join().expect("first request thread panicked");
        let (r1, l1) = h1.join().expect("second request thread panicked");
        ([r0, r1], [l0, l1])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_merges_params() {
        let mut config = ModelConfig::new("http://x:1/", "m");
        config.params.insert("temperature".into(), json!(0.7));
        config.params.insert("seed".into(), json!(3));
        let client = ModelClient::new(config);
        let body = client.request_body("hi");
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["stream"], false);
        assert_eq!(
            client.config().url(CHAT_PATH),
            "http://x:1/v1/chat/completions"
        );
    }

    #[test]
    fn config_defaults_from_toml() {
        let config: ModelConfig = toml::from_str(
            "endpoint = \"http://localhost:11434\"\nmodel = \"qwen3:14b\"\n[params]\ntemperature = 0.6\n",
        )
        .unwrap();
        assert_eq!(config.max_retries, 3);
        assert_eq!(config.params["temperature"], json!(0.6));
    }
}
