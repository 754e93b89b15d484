use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnswerShuffle, CohConfig, PipelineError, QueryTrace};
use crate::eval::{compute_metrics, rank_of_truth, EvalResult, MetricsRow, QueryResult};
use crate::fusion::{build_llm_scores, fuse, FusionConfig, GraphScoreTable};
use crate::gateway::Gateway;
use crate::parse::RankedAnswers;
use crate::verbalize::Verbalizer;

/// Reorders answer positions. `Seeded` draws a permutation from
/// `(seed, query id)`, so reruns reorder identically.
pub fn permute_answers(answers: &RankedAnswers, mode: AnswerShuffle, seed: u64, query_id: usize) -> RankedAnswers {
    let mut out = answers.clone();
    let mut positions: Vec<usize> = (1..=answers.entries.len()).collect();
    match mode {
        AnswerShuffle::None | AnswerShuffle::Identity => {}
        AnswerShuffle::Seeded => {
            let mut h = Sha256::new();
            h.update(b"answer-shuffle");
            h.update(seed.to_le_bytes());
            h.update((query_id as u64).to_le_bytes());
            let digest = h.finalize();
            let mut key = [0u8; 32];
            key.copy_from_slice(&digest[..32]);
            positions.shuffle(&mut ChaCha8Rng::from_seed(key));
        }
    }
    for (e, p) in out.entries.iter_mut().zip(positions) {
        e.position = p;
    }
    out.entries.sort_by_key(|e| e.position);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRun {
    pub metrics: EvalResult,
    pub per_query: Vec<QueryResult>,
}

/// Everything scoring needs besides the traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSettings {
    pub fusion: FusionConfig,
    pub shuffle: AnswerShuffle,
    pub seed: u64,
    pub num_entities: usize,
}

impl ScoreSettings {
    pub fn from_config(config: &CohConfig, num_entities: usize) -> Self {
        Self {
            fusion: config.fusion,
            shuffle: config.answer_shuffle,
            seed: config.seed,
            num_entities,
        }
    }
}

/// Fuses and ranks every trace. Graph rows are looked up by query id;
/// a missing table or row contributes nothing.
pub fn score_traces(
    traces: &[QueryTrace],
    graph: Option<&GraphScoreTable>,
    settings: &ScoreSettings,
) -> Result<ScoredRun, PipelineError> {
    if traces.is_empty() {
        return Err(PipelineError::NoTraces);
    }
    let fusion = &settings.fusion;
    fusion.validate()?;
    let mut ranks = Vec::with_capacity(traces.len());
    let mut per_query = Vec::with_capacity(traces.len());
    for t in traces {
        let answers = permute_answers(&t.answers, settings.shuffle, settings.seed, t.query.id);
        let llm = build_llm_scores(&answers, fusion.alpha);
        let row = graph.and_then(|g| g.row(t.query.id));
        let ranking = fuse(&llm, row, fusion, settings.num_entities)?;
        let rank = rank_of_truth(&ranking, t.query.ground_truth)?;
        ranks.push((t.query.id, rank));
        per_query.push(QueryResult {
            query: t.query.id,
            rank,
            top10: ranking.top(10).to_vec(),
        });
    }
    Ok(ScoredRun {
        metrics: compute_metrics(&ranks)?,
        per_query,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    W,
}

impl std::str::FromStr for SweepParam {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "w" => Ok(Self::W),
            _ => Err(PipelineError::Config(format!("cannot sweep {s:?}; expected alpha or w"))),
        }
    }
}

/// Row labels for a metrics report.
#[derive(Debug, Clone, Copy)]
pub struct RunLabels<'a> {
    pub run_id: &'a str,
    pub dataset: &'a str,
    pub variant: &'a str,
}

/// One metrics row per value of `param`, re-scoring cached traces.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    traces: &[QueryTrace],
    graph: Option<&GraphScoreTable>,
    base: &ScoreSettings,
    labels: RunLabels,
) -> Result<Vec<MetricsRow>, PipelineError> {
    if traces.is_empty() {
        return Err(PipelineError::NoTraces);
    }
    values
        .iter()
        .map(|&v| {
            let mut settings = *base;
            match param {
                SweepParam::Alpha => settings.fusion.alpha = v,
                SweepParam::W => settings.fusion.w = v,
            }
            let scored = score_traces(traces, graph, &settings)?;
            let f = settings.fusion;
            Ok(MetricsRow::new(labels.run_id, labels.dataset, labels.variant, f.alpha, f.w, &scored.metrics))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub query: usize,
    pub prompt: String,
    pub reply: String,
}

/// Asks the model to justify its answers over the trace's final chains.
pub fn explain(trace: &QueryTrace, verbalizer: &Verbalizer, gateway: &Gateway) -> Result<Explanation, PipelineError> {
    if trace.chains.is_empty() {
        return Err(PipelineError::NothingToExplain(trace.query.id));
    }
    let bundle = verbalizer.build_explanation_prompt(&trace.chains, &trace.query)?;
    let reply = gateway.complete(&bundle)?;
    Ok(Explanation {
        query: trace.query.id,
        prompt: bundle.text,
        reply: reply.text,
    })
}
