//! Chat-completion client for remote answer oracles.
//!
//! Request: `{"model", "messages": [system, user], "temperature": 0, "n": 1}`
//! plus `"source_salience": true` when salience is wanted. Response: the
//! usual `choices[0].message.content`, and optionally a top-level
//! `source_salience` array with one non-negative number per source.

use std::time::Duration;

use ctxplain_core::prompt::{build_prompt, INSTRUCTION};
use ctxplain_core::{Answer, Oracle, OracleCapabilities, OracleError, Query, SourceDocument};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DEFAULT_TIMEOUT_SECS: u64 = 60;
pub const DEFAULT_MAX_CONTEXT_CHARS: usize = 100_000;
pub const ATTEMPTS: u32 = 3;

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

fn default_max_chars() -> usize {
    DEFAULT_MAX_CONTEXT_CHARS
}

fn default_backoff() -> u64 {
    250
}

fn default_model() -> String {
    "default".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpOracleConfig {
    pub url: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_chars")]
    pub max_context_chars: usize,
    /// Whether the endpoint returns `source_salience`.
    #[serde(default)]
    pub supports_attention: bool,
    /// First retry delay; doubles per attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

impl HttpOracleConfig {
    pub fn new(url: impl Into<String>) -> Self {
        HttpOracleConfig {
            url: url.into(),
            model: default_model(),
            api_key: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_context_chars: DEFAULT_MAX_CONTEXT_CHARS,
            supports_attention: false,
            backoff_ms: default_backoff(),
        }
    }
}

pub struct HttpOracle {
    id: String,
    config: HttpOracleConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    source_salience: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

enum Failure {
    Retryable(String),
    Fatal(OracleError),
}

impl HttpOracle {
    pub fn new(id: impl Into<String>, config: HttpOracleConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build();
        HttpOracle {
            id: id.into(),
            config,
            agent,
        }
    }

    pub fn config(&self) -> &HttpOracleConfig {
        &self.config
    }

    fn request_body(&self, query: &Query, selected: &[&SourceDocument], salience: bool) -> Result<Value, OracleError> {
        let prompt = build_prompt(query, selected, self.config.max_context_chars)?.text;
        let user = prompt
            .strip_prefix(INSTRUCTION)
            .map(|rest| rest.trim_start_matches('\n').to_string())
            .unwrap_or(prompt);
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": INSTRUCTION},
                {"role": "user", "content": user},
            ],
            "temperature": 0,
            "n": 1,
        });
        if salience {
            body["source_salience"] = Value::Bool(true);
        }
        Ok(body)
    }

    fn send_once(&self, body: &Value) -> Result<Completion, Failure> {
        let mut request = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body) {
            Ok(response) => response
                .into_json::<Completion>()
                .map_err(|e| Failure::Fatal(OracleError::MalformedResponse(e.to_string()))),
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                Err(Failure::Retryable(format!("HTTP {code}")))
            }
            Err(ureq::Error::Status(code, response)) => {
                let text = response.into_string().unwrap_or_default();
                Err(Failure::Fatal(OracleError::Unavailable(format!("HTTP {code}: {text}"))))
            }
            Err(ureq::Error::Transport(t)) => Err(Failure::Retryable(t.to_string())),
        }
    }

    /// Sends with bounded retries; returns the completion and attempt count.
    fn send(&self, body: &Value) -> Result<(Completion, u64), OracleError> {
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 1..=ATTEMPTS {
            match self.send_once(body) {
                Ok(c) => return Ok((c, attempt as u64)),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    tracing::warn!(attempt, url = %self.config.url, "oracle request failed: {msg}");
                    last = msg;
                    if attempt < ATTEMPTS {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(OracleError::Unavailable(format!(
            "{} after {ATTEMPTS} attempts: {last}",
            self.config.url
        )))
    }
}

impl Oracle for HttpOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> OracleCapabilities {
        OracleCapabilities {
            supports_attention: self.config.supports_attention,
            max_context_chars: self.config.max_context_chars,
        }
    }

    fn answer(&self, query: &Query, selected: &[&SourceDocument]) -> Result<Answer, OracleError> {
        let (completion, attempts) = self.send(&self.request_body(query, selected, false)?)?;
        let choice = completion
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| OracleError::MalformedResponse("no choices in response".into()))?;
        Ok(Answer {
            raw: choice.message.content,
            calls: attempts,
        })
    }

    fn salience(&self, query: &Query, selected: &[&SourceDocument]) -> Result<Vec<f64>, OracleError> {
        if !self.config.supports_attention {
            return Err(OracleError::UnsupportedCapability);
        }
        let (completion, _) = self.send(&self.request_body(query, selected, true)?)?;
        let values = completion
            .source_salience
            .ok_or_else(|| OracleError::MalformedResponse("response has no source_salience".into()))?;
        if values.len() != selected.len() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OracleError::MalformedResponse(format!(
                "source_salience must hold {} non-negative numbers",
                selected.len()
            )));
        }
        Ok(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_carries_deterministic_chat_shape() {
        let mut config = HttpOracleConfig::new("http://127.0.0.1:9/v1/chat/completions");
        config.model = "tiny".into();
        let oracle = HttpOracle::new("remote", config);
        let q = Query::new("Who won?").unwrap();
        let d = SourceDocument::new("d1", "Somebody won.", 1.0);
        let body = oracle.request_body(&q, &[&d], false).unwrap();
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["n"], 1);
        assert_eq!(body["model"], "tiny");
        assert_eq!(body["messages"][0]["content"], INSTRUCTION);
        let user = body["messages"][1]["content"].as_str().unwrap();
        assert!(user.starts_with("[BEGIN SOURCE 1]\nSomebody won.\n[END SOURCE 1]"));
        assert!(user.ends_with("Question: Who won?\nAnswer:"));
        assert!(body.get("source_salience").is_none());
    }

    #[test]
    fn api_key_is_never_serialized() {
        let mut config = HttpOracleConfig::new("http://x");
        config.api_key = Some("secret".into());
        assert!(!serde_json::to_string(&config).unwrap().contains("secret"));
    }

    #[test]
    fn salience_requires_capability() {
        let oracle = HttpOracle::new("r", HttpOracleConfig::new("http://127.0.0.1:9"));
        let q = Query::new("q").unwrap();
        assert_eq!(oracle.salience(&q, &[]), Err(OracleError::UnsupportedCapability));
    }
}
