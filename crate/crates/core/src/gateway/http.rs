use std::thread;

use serde_json::{json, Value};

use super::{
    BackendFailure, BackendKind, BackendReply, ChatBackend, ConfigError, FailureKind,
    GenerationParams, HttpConfig,
};
use crate::verbalize::PromptBundle;

/// Chat-completions over HTTP: one user message per request, first choice
/// returned. Connection failures, 429 and 5xx are retried with doubling
/// backoff; other statuses and malformed bodies fail immediately.
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(FailureKind, String),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, ConfigError> {
        if config.endpoint.is_empty() {
            return Err(ConfigError::Invalid("http backend needs an endpoint".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    fn token(&self) -> Option<String> {
        let var = self.config.api_key_env.as_deref()?;
        match std::env::var(var) {
            Ok(t) if !t.is_empty() => Some(t),
            _ => {
                log::warn!("environment variable {var} is not set; sending no bearer token");
                None
            }
        }
    }

    fn attempt(&self, body: &Value, token: Option<&str>) -> Attempt {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("HTTP {status}: {}", truncate(&text)));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(
                FailureKind::Protocol,
                format!("HTTP {status}: {}", truncate(&text)),
            );
        }
        match extract_content(&text) {
            Some(content) => Attempt::Done(content),
            None => Attempt::Fatal(
                FailureKind::Protocol,
                format!("no choices[0].message.content in reply: {}", truncate(&text)),
            ),
        }
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn extract_content(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

impl ChatBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::HttpChat
    }

    fn complete(
        &self,
        bundle: &PromptBundle,
        params: &GenerationParams,
    ) -> Result<BackendReply, BackendFailure> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": bundle.text}],
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "top_p": params.top_p,
        });
        let token = self.token();
        let max_attempts = self.config.retries + 1;
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            match self.attempt(&body, token.as_deref()) {
                Attempt::Done(text) => {
                    return Ok(BackendReply {
                        text,
                        attempts: attempt,
                    })
                }
                Attempt::Fatal(kind, message) => {
                    return Err(BackendFailure {
                        kind,
                        message,
                        attempts: attempt,
                    })
                }
                Attempt::Retry(message) => {
                    log::debug!("attempt {attempt}/{max_attempts} failed: {message}");
                    last = message;
                    if attempt < max_attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(BackendFailure {
            kind: FailureKind::Transport,
            message: format!("gave up after {max_attempts} attempts: {last}"),
            attempts: max_attempts,
        })
    }
}
