//! Dispatching prompt bundles to a chat-completion backend.
//!
//! A [`Gateway`] wraps one [`ChatBackend`] (remote HTTP or a deterministic
//! mock), timestamps every call into a [`Transcript`], optionally appends
//! transcripts to a JSONL log, and runs batches with a hard bound on the
//! number of requests in flight.

mod http;
mod mock;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::Vocabulary;
use crate::verbalize::{PromptBundle, StepKind};

pub use http::HttpBackend;
pub use mock::{OracleMock, RecencyMock, ScriptEntry, ScriptedMock};

/// Sampling parameters sent with every request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: 8000,
            temperature: 0.0,
            top_p: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    /// First backoff delay; doubles after every failed attempt.
    pub backoff: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "mistralai/Mixtral-8x7B-Instruct-v0.1".into(),
            api_key_env: None,
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    HttpChat(HttpConfig),
    ScriptedMock {
        script: PathBuf,
    },
    RecencyMock,
    OracleMock {
        hit_probability: f64,
        seed: u64,
        /// Answers listed per reply; the first is the hit or a decoy.
        answers: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    ScriptedMock,
    RecencyMock,
    OracleMock,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Network failure or retryable server status, after all retries.
    Transport,
    /// The server answered with something that is not a completion.
    Protocol,
    /// A scripted mock had no entry for the bundle.
    Script,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendFailure {
    pub kind: FailureKind,
    pub message: String,
    pub attempts: u32,
}

pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn complete(
        &self,
        bundle: &PromptBundle,
        params: &GenerationParams,
    ) -> Result<BackendReply, BackendFailure>;
}

/// One call, as recorded in the transcript log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub step: StepKind,
    pub query_id: Option<usize>,
    pub request: String,
    pub response: Option<String>,
    pub error: Option<String>,
    pub backend: BackendKind,
    pub attempts: u32,
    /// Microseconds since the gateway was created.
    pub started_us: u64,
    pub finished_us: u64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind:?} error: {message}")]
pub struct GatewayError {
    pub kind: FailureKind,
    pub message: String,
    pub transcript: Box<Transcript>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid backend configuration: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Script { path: PathBuf, message: String },
    #[error("transcript log {path}: {source}")]
    Log {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    params: GenerationParams,
    epoch: Instant,
    calls: AtomicUsize,
    log: Option<Mutex<BufWriter<File>>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.kind())
            .field("params", &self.params)
            .field("calls", &self.calls.load(Ordering::Relaxed))
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>, params: GenerationParams) -> Self {
        Self {
            backend,
            params,
            epoch: Instant::now(),
            calls: AtomicUsize::new(0),
            log: None,
        }
    }

    /// Builds the backend named by `config`. Mocks that emit entity names
    /// take them from `vocab`.
    pub fn from_config(
        config: &BackendConfig,
        params: GenerationParams,
        vocab: &Vocabulary,
    ) -> Result<Self, ConfigError> {
        let names: Arc<[String]> = vocab.entity_names().into();
        let backend: Box<dyn ChatBackend> = match config {
            BackendConfig::HttpChat(cfg) => Box::new(HttpBackend::new(cfg.clone())?),
            BackendConfig::ScriptedMock { script } => Box::new(ScriptedMock::from_file(script)?),
            BackendConfig::RecencyMock => Box::new(RecencyMock::new(names)),
            BackendConfig::OracleMock {
                hit_probability,
                seed,
                answers,
            } => {
                if !(0.0..=1.0).contains(hit_probability) {
                    return Err(ConfigError::Invalid(format!(
                        "hit probability {hit_probability} outside [0, 1]"
                    )));
                }
                Box::new(OracleMock::new(names, *hit_probability, *seed, *answers))
            }
        };
        Ok(Self::new(backend, params))
    }

    /// Appends one JSON line per call to `path`.
    pub fn with_transcript_log(mut self, path: &Path) -> Result<Self, ConfigError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| ConfigError::Log {
                path: path.to_path_buf(),
                source,
            })?;
        self.log = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    pub fn kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }

    /// Number of calls issued so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn micros(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    pub fn complete(&self, bundle: &PromptBundle) -> Result<Completion, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let started_us = self.micros();
        let start = Instant::now();
        let result = self.backend.complete(bundle, &self.params);
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        let finished_us = self.micros();
        let mut transcript = Transcript {
            step: bundle.step_kind,
            query_id: bundle.query.map(|q| q.id),
            request: bundle.text.clone(),
            response: None,
            error: None,
            backend: self.backend.kind(),
            attempts: 0,
            started_us,
            finished_us,
            latency_ms,
        };
        let out = match result {
            Ok(reply) => {
                transcript.response = Some(reply.text.clone());
                transcript.attempts = reply.attempts;
                Ok(Completion {
                    text: reply.text,
                    transcript,
                })
            }
            Err(failure) => {
                transcript.error = Some(failure.message.clone());
                transcript.attempts = failure.attempts;
                Err(GatewayError {
                    kind: failure.kind,
                    message: failure.message,
                    transcript: Box::new(transcript),
                })
            }
        };
        if let Some(log) = &self.log {
            let t = match &out {
                Ok(c) => &c.transcript,
                Err(e) => &*e.transcript,
            };
            let mut w = log.lock().unwrap_or_else(|p| p.into_inner());
            let line = serde_json::to_string(t).expect("transcripts serialize");
            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                log::warn!("failed to append transcript: {e}");
            }
        }
        out
    }

    /// Completes every bundle with at most `max_in_flight` requests
    /// outstanding. Results align with the input; failures stay in their slot.
    pub fn complete_batch(
        &self,
        bundles: &[PromptBundle],
        max_in_flight: usize,
    ) -> Vec<Result<Completion, GatewayError>> {
        bounded_map(bundles, max_in_flight, |b| self.complete(b))
    }
}

/// Order-preserving parallel map over a dedicated pool of `workers` threads.
pub(crate) fn bounded_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let workers = workers.max(1);
    if workers == 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}
