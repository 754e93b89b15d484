use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::fusion::FusionConfig;
use crate::gateway::{BackendConfig, GenerationParams, HttpConfig};
use crate::history::HistoryScope;
use crate::verbalize::TimeMode;

/// How Step 1 picks its first-order histories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step1Selection {
    #[default]
    Llm,
    /// The newest `n` histories, no model call.
    Recency,
}

/// Reordering applied to parsed answers before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerShuffle {
    #[default]
    None,
    /// Runs the shuffle code path with the identity permutation.
    Identity,
    /// A per-query permutation drawn from the run seed.
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohConfig {
    pub k: usize,
    pub n: usize,
    pub first_order_limit: usize,
    pub per_chain_cap: usize,
    pub time_mode: TimeMode,
    pub granularity: u32,
    pub anonymize: bool,
    pub step1_selection: Step1Selection,
    pub answer_shuffle: AnswerShuffle,
    pub history_scope: HistoryScope,
    pub fuzzy: bool,
    pub backend: BackendConfig,
    pub generation: GenerationParams,
    pub fusion: FusionConfig,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for CohConfig {
    fn default() -> Self {
        Self {
            k: 2,
            n: 30,
            first_order_limit: 100,
            per_chain_cap: 3,
            time_mode: TimeMode::OrdinalDay,
            granularity: 1,
            anonymize: false,
            step1_selection: Step1Selection::Llm,
            answer_shuffle: AnswerShuffle::None,
            history_scope: HistoryScope::AllSplits,
            fuzzy: false,
            backend: BackendConfig::RecencyMock,
            generation: GenerationParams::default(),
            fusion: FusionConfig::default(),
            seed: 0,
            max_in_flight: 8,
        }
    }
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| invalid(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(invalid(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

/// Parses a snake_case enum name through its serde representation.
fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T, PipelineError> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| invalid(format!("{key}: unknown value {value:?}")))
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("not a unit enum: {other:?}"),
    }
}

/// Backend fields are collected flat and assembled at the end.
#[derive(Debug, Default)]
struct BackendKeys {
    kind: Option<String>,
    http: HttpConfig,
    script: Option<PathBuf>,
    hit_probability: Option<f64>,
    oracle_answers: Option<usize>,
}

pub const CONFIG_KEYS: &[&str] = &[
    "k",
    "n",
    "first_order_limit",
    "per_chain_cap",
    "time_mode",
    "granularity",
    "anonymize",
    "step1_selection",
    "answer_shuffle",
    "history_scope",
    "fuzzy",
    "backend",
    "endpoint",
    "model",
    "api_key_env",
    "timeout_secs",
    "retries",
    "backoff_ms",
    "script",
    "hit_probability",
    "oracle_answers",
    "max_tokens",
    "temperature",
    "top_p",
    "alpha",
    "w",
    "graph_normalization",
    "seed",
    "max_in_flight",
];

impl CohConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k < 2 {
            return Err(invalid(format!("k must be at least 2, got {}", self.k)));
        }
        if self.n < 1 {
            return Err(invalid("n must be at least 1"));
        }
        if self.first_order_limit < self.n {
            return Err(invalid(format!(
                "first_order_limit ({}) must be at least n ({})",
                self.first_order_limit, self.n
            )));
        }
        if self.per_chain_cap < 1 {
            return Err(invalid("per_chain_cap must be at least 1"));
        }
        if self.granularity < 1 {
            return Err(invalid("granularity must be at least 1"));
        }
        if self.max_in_flight < 1 {
            return Err(invalid("max_in_flight must be at least 1"));
        }
        self.fusion
            .validate()
            .map_err(|e| invalid(e.to_string()))
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let mut keys = self.backend_keys();
        self.apply(key, value, &mut keys)?;
        self.backend = keys.build()?;
        self.reseed(self.seed);
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str, b: &mut BackendKeys) -> Result<(), PipelineError> {
        match key {
            "k" => self.k = parse_num(key, value)?,
            "n" => self.n = parse_num(key, value)?,
            "first_order_limit" => self.first_order_limit = parse_num(key, value)?,
            "per_chain_cap" => self.per_chain_cap = parse_num(key, value)?,
            "time_mode" => self.time_mode = parse_enum(key, value)?,
            "granularity" => self.granularity = parse_num(key, value)?,
            "anonymize" => self.anonymize = parse_bool(key, value)?,
            "step1_selection" => self.step1_selection = parse_enum(key, value)?,
            "answer_shuffle" => self.answer_shuffle = parse_enum(key, value)?,
            "history_scope" => self.history_scope = parse_enum(key, value)?,
            "fuzzy" => self.fuzzy = parse_bool(key, value)?,
            "backend" => b.kind = Some(value.to_string()),
            "endpoint" => b.http.endpoint = value.to_string(),
            "model" => b.http.model = value.to_string(),
            "api_key_env" => {
                b.http.api_key_env = (!value.is_empty()).then(|| value.to_string())
            }
            "timeout_secs" => {
                b.http.timeout = Duration::try_from_secs_f64(parse_num(key, value)?)
                    .map_err(|_| invalid(format!("{key}: {value:?} is not a duration")))?
            }
            "retries" => b.http.retries = parse_num(key, value)?,
            "backoff_ms" => b.http.backoff = Duration::from_millis(parse_num(key, value)?),
            "script" => b.script = Some(PathBuf::from(value)),
            "hit_probability" => b.hit_probability = Some(parse_num(key, value)?),
            "oracle_answers" => b.oracle_answers = Some(parse_num(key, value)?),
            "max_tokens" => self.generation.max_tokens = parse_num(key, value)?,
            "temperature" => self.generation.temperature = parse_num(key, value)?,
            "top_p" => self.generation.top_p = parse_num(key, value)?,
            "alpha" => self.fusion.alpha = parse_num(key, value)?,
            "w" => self.fusion.w = parse_num(key, value)?,
            "graph_normalization" => self.fusion.graph_normalization = parse_enum(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "max_in_flight" => self.max_in_flight = parse_num(key, value)?,
            _ => return Err(invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn backend_keys(&self) -> BackendKeys {
        let mut b = BackendKeys::default();
        match &self.backend {
            BackendConfig::HttpChat(h) => {
                b.kind = Some("http_chat".into());
                b.http = h.clone();
            }
            BackendConfig::ScriptedMock { script } => {
                b.kind = Some("scripted_mock".into());
                b.script = Some(script.clone());
            }
            BackendConfig::RecencyMock => b.kind = Some("recency_mock".into()),
            BackendConfig::OracleMock {
                hit_probability,
                answers,
                ..
            } => {
                b.kind = Some("oracle_mock".into());
                b.hit_probability = Some(*hit_probability);
                b.oracle_answers = Some(*answers);
            }
        }
        b
    }

    /// Parses a `key = value` file over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        let mut b = cfg.backend_keys();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(invalid(format!("line {}: expected `key = value`", i + 1)));
            };
            cfg.apply(key.trim(), value.trim(), &mut b)
                .map_err(|e| invalid(format!("line {}: {e}", i + 1)))?;
        }
        cfg.backend = b.build()?;
        let seed = cfg.seed;
        cfg.reseed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Sets the run seed, which also drives the oracle mock.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        if let BackendConfig::OracleMock { seed: s, .. } = &mut self.backend {
            *s = seed;
        }
    }

    /// Every key, one per line, in a form [`CohConfig::parse`] reads back.
    pub fn to_kv(&self) -> String {
        let mut lines = vec![
            format!("k = {}", self.k),
            format!("n = {}", self.n),
            format!("first_order_limit = {}", self.first_order_limit),
            format!("per_chain_cap = {}", self.per_chain_cap),
            format!("time_mode = {}", enum_name(&self.time_mode)),
            format!("granularity = {}", self.granularity),
            format!("anonymize = {}", self.anonymize),
            format!("step1_selection = {}", enum_name(&self.step1_selection)),
            format!("answer_shuffle = {}", enum_name(&self.answer_shuffle)),
            format!("history_scope = {}", enum_name(&self.history_scope)),
            format!("fuzzy = {}", self.fuzzy),
        ];
        let b = self.backend_keys();
        lines.push(format!("backend = {}", b.kind.as_deref().unwrap_or("recency_mock")));
        match &self.backend {
            BackendConfig::HttpChat(h) => {
                lines.push(format!("endpoint = {}", h.endpoint));
                lines.push(format!("model = {}", h.model));
                lines.push(format!("api_key_env = {}", h.api_key_env.as_deref().unwrap_or("")));
                lines.push(format!("timeout_secs = {}", h.timeout.as_secs_f64()));
                lines.push(format!("retries = {}", h.retries));
                lines.push(format!("backoff_ms = {}", h.backoff.as_millis()));
            }
            BackendConfig::ScriptedMock { script } => {
                lines.push(format!("script = {}", script.display()))
            }
            BackendConfig::RecencyMock => {}
            BackendConfig::OracleMock {
                hit_probability,
                answers,
                ..
            } => {
                lines.push(format!("hit_probability = {hit_probability}"));
                lines.push(format!("oracle_answers = {answers}"));
            }
        }
        lines.extend([
            format!("max_tokens = {}", self.generation.max_tokens),
            format!("temperature = {}", self.generation.temperature),
            format!("top_p = {}", self.generation.top_p),
            format!("alpha = {}", self.fusion.alpha),
            format!("w = {}", self.fusion.w),
            format!(
                "graph_normalization = {}",
                enum_name(&self.fusion.graph_normalization)
            ),
            format!("seed = {}", self.seed),
            format!("max_in_flight = {}", self.max_in_flight),
        ]);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

impl BackendKeys {
    fn build(self) -> Result<BackendConfig, PipelineError> {
        match self.kind.as_deref().unwrap_or("recency_mock") {
            "http_chat" => Ok(BackendConfig::HttpChat(self.http)),
            "scripted_mock" => Ok(BackendConfig::ScriptedMock {
                script: self
                    .script
                    .ok_or_else(|| invalid("backend scripted_mock needs `script`"))?,
            }),
            "recency_mock" => Ok(BackendConfig::RecencyMock),
            "oracle_mock" => Ok(BackendConfig::OracleMock {
                hit_probability: self.hit_probability.unwrap_or(1.0),
                seed: 0,
                answers: self.oracle_answers.unwrap_or(5),
            }),
            other => Err(invalid(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    /// Step 1 takes the newest histories instead of asking the model.
    NoLr,
    /// Answer order is shuffled before scoring.
    NoIs,
    /// Entities and relations are shown as numeric ids.
    Anonymize,
}

impl FromStr for AblationKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_lr" | "no-lr" => Ok(Self::NoLr),
            "no_is" | "no-is" => Ok(Self::NoIs),
            "anonymize" => Ok(Self::Anonymize),
            _ => Err(invalid(format!(
                "unknown ablation {s:?} (expected no_lr, no_is or anonymize)"
            ))),
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&enum_name(self))
    }
}

pub fn ablate(kind: AblationKind, base: &CohConfig) -> Result<CohConfig, PipelineError> {
    base.validate()?;
    let mut cfg = base.clone();
    match kind {
        AblationKind::NoLr => cfg.step1_selection = Step1Selection::Recency,
        AblationKind::NoIs => cfg.answer_shuffle = AnswerShuffle::Seeded,
        AblationKind::Anonymize => cfg.anonymize = true,
    }
    Ok(cfg)
}
