//! End-to-end runs: config, the per-query step loop, cached traces, and
//! re-scoring without model calls.
//!
//! Prompting and scoring are separate phases. [`run_coh`] produces one
//! [`QueryTrace`] per query and is the only place the gateway is used;
//! [`score_traces`] and [`sweep`] work purely from those traces.

mod config;
mod run;
mod score;
mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::EvalError;
use crate::fusion::FusionError;
use crate::gateway::{ConfigError, GatewayError};
use crate::history::HistoryError;
use crate::kg::{
    augment_reversed, load_dataset, parse_overlay, DatasetPaths, KgError, RelationId, TemporalKg,
    Vocabulary,
};
use crate::verbalize::{TimeStyle, VerbalizeError, Verbalizer};

pub use config::{ablate, AblationKind, AnswerShuffle, CohConfig, Step1Selection, CONFIG_KEYS};
pub use run::{run_coh, Fallback, QueryTrace, StepTrace};
pub use score::{
    explain, permute_answers, score_traces, sweep, Explanation, RunLabels, ScoreSettings, ScoredRun,
    SweepParam,
};
pub use store::{content_hash, read_run, write_run, RunManifest};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Store { path: PathBuf, message: String },
    #[error("no cached traces to score; run `run-coh` first")]
    NoTraces,
    #[error("no trace for query {0}")]
    MissingTrace(usize),
    #[error("query {0} has no history chains to explain")]
    NothingToExplain(usize),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Verbalize(#[from] VerbalizeError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Backend(#[from] ConfigError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A loaded, augmented dataset plus its optional text overlays.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub kg: TemporalKg,
    pub vocab: Vocabulary,
    /// Relation surfaces used in prompts, keyed in the augmented space.
    pub phrases: BTreeMap<RelationId, String>,
    /// Relation surfaces used in leakage prompts.
    pub leakage_phrases: BTreeMap<RelationId, String>,
}

impl Dataset {
    /// Loads the conventional directory layout. `relation_phrases.txt` and
    /// `leakage_phrases.txt` are read when present.
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        let (kg, vocab) = load_dataset(&DatasetPaths::from_dir(dir))?;
        let (kg, vocab) = augment_reversed(kg, vocab)?;
        let overlay = |name: &str| -> Result<BTreeMap<RelationId, String>, PipelineError> {
            let p = dir.join(name);
            Ok(if p.exists() { parse_overlay(&p)? } else { BTreeMap::new() })
        };
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Ok(Self {
            name,
            kg,
            vocab,
            phrases: overlay("relation_phrases.txt")?,
            leakage_phrases: overlay("leakage_phrases.txt")?,
        })
    }

    /// A verbalizer honoring the time and anonymization settings of `config`.
    pub fn verbalizer(&self, config: &CohConfig) -> Verbalizer<'_> {
        Verbalizer::new(&self.kg, &self.vocab)
            .with_time_style(TimeStyle {
                mode: config.time_mode,
                origin: self.kg.time_origin(),
                granularity: config.granularity,
            })
            .anonymized(config.anonymize)
            .with_phrases(self.phrases.clone())
            .with_leakage_phrases(self.leakage_phrases.clone())
    }
}
