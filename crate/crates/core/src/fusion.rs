//! Position scores for model answers and their linear blend with an
//! external graph model's scores.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::EntityId;
use crate::parse::RankedAnswers;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("{0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate score for query {query}, entity {entity}")]
    DuplicateScore {
        path: PathBuf,
        line: usize,
        query: usize,
        entity: EntityId,
    },
    #[error("entity {entity} outside an entity space of {num_entities}")]
    EntityOutOfRange { entity: EntityId, num_entities: usize },
}

/// Score of the answer at 1-based `position`: `1 / (1 + exp(alpha * position))`.
pub fn position_to_score(position: usize, alpha: f64) -> f64 {
    1.0 / (1.0 + (alpha * position as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphNormalization {
    /// Use raw scores as given.
    None,
    /// Per query, map the smallest present score to 0 and the largest to 1.
    #[default]
    MinMax,
    /// Per query, softmax over the present scores.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub alpha: f64,
    /// Weight on the graph score; `1 - w` goes to the model score.
    pub w: f64,
    pub graph_normalization: GraphNormalization,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            w: 0.35,
            graph_normalization: GraphNormalization::MinMax,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(FusionError::InvalidConfig(format!(
                "alpha must be a positive finite number, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(FusionError::InvalidConfig(format!(
                "w must lie in [0, 1], got {}",
                self.w
            )));
        }
        Ok(())
    }
}

/// Model scores for the entities one reply resolved to. Everything else
/// scores 0.
pub type LlmScoreMap = BTreeMap<EntityId, f64>;

pub fn build_llm_scores(answers: &RankedAnswers, alpha: f64) -> LlmScoreMap {
    answers
        .resolved()
        .map(|(e, pos)| (e, position_to_score(pos, alpha)))
        .collect()
}

/// Sparse per-query graph scores keyed by query id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphScoreTable {
    rows: HashMap<usize, BTreeMap<EntityId, f64>>,
}

impl GraphScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: usize, entity: EntityId, score: f64) -> Option<f64> {
        self.rows.entry(query).or_default().insert(entity, score)
    }

    pub fn row(&self, query: usize) -> Option<&BTreeMap<EntityId, f64>> {
        self.rows.get(&query)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reads `query_index<TAB>entity_id<TAB>score` lines. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn from_tsv(path: &Path) -> Result<Self, FusionError> {
        let text = fs::read_to_string(path).map_err(|source| FusionError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |message: String| FusionError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [q, e, s] = fields[..] else {
                return Err(malformed(format!("expected 3 fields, got {}", fields.len())));
            };
            let query = q.parse().map_err(|_| malformed(format!("bad query index {q:?}")))?;
            let entity = e.parse().map_err(|_| malformed(format!("bad entity id {e:?}")))?;
            let score: f64 = s.parse().map_err(|_| malformed(format!("bad score {s:?}")))?;
            if !score.is_finite() {
                return Err(malformed(format!("score {s} is not finite")));
            }
            if table.insert(query, entity, score).is_some() {
                return Err(FusionError::DuplicateScore {
                    path: path.to_path_buf(),
                    line: line_no,
                    query,
                    entity,
                });
            }
        }
        Ok(table)
    }
}

/// Normalizes one query's graph scores. A row whose scores are all equal
/// maps to 0.5 under min-max.
pub fn normalize_graph(
    row: &BTreeMap<EntityId, f64>,
    mode: GraphNormalization,
) -> BTreeMap<EntityId, f64> {
    match mode {
        GraphNormalization::None => row.clone(),
        GraphNormalization::MinMax => {
            let (lo, hi) = row
                .values()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let span = hi - lo;
            row.iter()
                .map(|(&e, &v)| (e, if span > 0.0 { (v - lo) / span } else { 0.5 }))
                .collect()
        }
        GraphNormalization::Softmax => {
            let max = row.values().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<(EntityId, f64)> =
                row.iter().map(|(&e, &v)| (e, (v - max).exp())).collect();
            let z: f64 = exps.iter().map(|(_, x)| x).sum();
            exps.into_iter().map(|(e, x)| (e, x / z)).collect()
        }
    }
}

/// Entities ordered best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRanking {
    pub order: Vec<(EntityId, f64)>,
}

impl FusedRanking {
    pub fn top(&self, k: usize) -> &[(EntityId, f64)] {
        &self.order[..k.min(self.order.len())]
    }

    pub fn score_of(&self, entity: EntityId) -> Option<f64> {
        self.order.iter().find(|(e, _)| *e == entity).map(|(_, s)| *s)
    }
}

/// Blends `w * graph + (1 - w) * llm` over every entity id. Entities absent
/// from a map score 0 there. Ties go to the smaller id.
pub fn fuse(
    llm: &LlmScoreMap,
    graph_row: Option<&BTreeMap<EntityId, f64>>,
    config: &FusionConfig,
    num_entities: usize,
) -> Result<FusedRanking, FusionError> {
    let mut scores = vec![0.0f64; num_entities];
    let check = |e: EntityId| {
        if (e as usize) < num_entities {
            Ok(e as usize)
        } else {
            Err(FusionError::EntityOutOfRange {
                entity: e,
                num_entities,
            })
        }
    };
    if let Some(row) = graph_row {
        for (&e, &g) in &normalize_graph(row, config.graph_normalization) {
            scores[check(e)?] += config.w * g;
        }
    }
    for (&e, &l) in llm {
        scores[check(e)?] += (1.0 - config.w) * l;
    }
    let mut order: Vec<(EntityId, f64)> = scores
        .into_iter()
        .enumerate()
        .map(|(e, s)| (e as EntityId, s))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(FusedRanking { order })
}
