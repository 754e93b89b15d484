//! Deterministic stand-ins for a real model.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendFailure, BackendKind, BackendReply, ChatBackend, ConfigError, FailureKind, GenerationParams};
use crate::kg::EntityId;
use crate::verbalize::{PromptBundle, StepKind};

fn surface(names: &[String], id: EntityId, anonymized: bool) -> String {
    if anonymized {
        id.to_string()
    } else {
        names.get(id as usize).cloned().unwrap_or_else(|| id.to_string())
    }
}

fn numbered(surfaces: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from("Possible answers:");
    for (i, s) in surfaces.into_iter().enumerate() {
        out.push_str(&format!("\n{}. {s}", i + 1));
    }
    out
}

/// Ids `0..min(n, items)`: the newest histories.
fn recency_selection(bundle: &PromptBundle) -> String {
    let n = bundle.limit.unwrap_or(usize::MAX).min(bundle.items.len());
    (0..n).map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

fn ok(text: String) -> Result<BackendReply, BackendFailure> {
    Ok(BackendReply { text, attempts: 1 })
}

/// Selects the lowest local ids and answers with the entities the chains
/// mention, in order of appearance.
#[derive(Debug, Clone)]
pub struct RecencyMock {
    names: Arc<[String]>,
}

impl RecencyMock {
    pub fn new(names: Arc<[String]>) -> Self {
        Self { names }
    }
}

impl ChatBackend for RecencyMock {
    fn kind(&self) -> BackendKind {
        BackendKind::RecencyMock
    }

    fn complete(&self, bundle: &PromptBundle, _: &GenerationParams) -> Result<BackendReply, BackendFailure> {
        let answers = || {
            bundle
                .mentioned_entities
                .iter()
                .map(|&e| surface(&self.names, e, bundle.anonymized))
        };
        match bundle.step_kind {
            StepKind::SelectFirstOrder | StepKind::SelectChain => ok(recency_selection(bundle)),
            StepKind::Answer => ok(numbered(answers())),
            StepKind::Explain => ok(canned_explanation(answers())),
            StepKind::Leakage => ok("No.".into()),
        }
    }
}

fn canned_explanation(answers: impl IntoIterator<Item = String>) -> String {
    let answers: Vec<String> = answers.into_iter().collect();
    let mut out = numbered(answers.iter().cloned());
    out.push_str("\n\nExplanations:");
    for (i, a) in answers.iter().enumerate() {
        out.push_str(&format!(
            "\n{}. {a}:\n{a} appears in the most recent given histories.",
            i + 1
        ));
    }
    out
}

/// Puts the ground truth first with probability `p`; otherwise a random
/// other entity leads. Remaining slots are filled with distinct decoys.
/// Draws are seeded from `(seed, query id, ground truth, prompt text)`.
#[derive(Debug, Clone)]
pub struct OracleMock {
    names: Arc<[String]>,
    hit_probability: f64,
    seed: u64,
    answers: usize,
}

impl OracleMock {
    pub fn new(names: Arc<[String]>, hit_probability: f64, seed: u64, answers: usize) -> Self {
        Self {
            names,
            hit_probability,
            seed,
            answers: answers.max(1),
        }
    }

    fn rng_for(&self, bundle: &PromptBundle) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        if let Some(q) = &bundle.query {
            h.update((q.id as u64).to_le_bytes());
            h.update(q.ground_truth.to_le_bytes());
        }
        h.update(bundle.text.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        ChaCha8Rng::from_seed(seed)
    }

    /// The ranked entity ids this mock answers with for `bundle`.
    pub fn answer_ids(&self, bundle: &PromptBundle) -> Vec<EntityId> {
        let Some(query) = bundle.query else {
            return Vec::new();
        };
        let n = self.names.len() as EntityId;
        let truth = query.ground_truth;
        let mut rng = self.rng_for(bundle);
        let hit = rng.random_bool(self.hit_probability);
        let mut out = Vec::with_capacity(self.answers);
        if hit {
            out.push(truth);
        }
        let pool: Vec<EntityId> = (0..n).filter(|&e| e != truth).collect();
        let want = self.answers.min(pool.len() + usize::from(hit));
        let decoys: Vec<EntityId> = pool
            .choose_multiple(&mut rng, want - out.len())
            .copied()
            .collect();
        out.extend(decoys);
        out
    }
}

impl ChatBackend for OracleMock {
    fn kind(&self) -> BackendKind {
        BackendKind::OracleMock
    }

    fn complete(&self, bundle: &PromptBundle, _: &GenerationParams) -> Result<BackendReply, BackendFailure> {
        let answers = || {
            self.answer_ids(bundle)
                .into_iter()
                .map(|e| surface(&self.names, e, bundle.anonymized))
        };
        match bundle.step_kind {
            StepKind::SelectFirstOrder | StepKind::SelectChain => ok(recency_selection(bundle)),
            StepKind::Answer => ok(numbered(answers())),
            StepKind::Explain => ok(canned_explanation(answers())),
            StepKind::Leakage => ok("No.".into()),
        }
    }
}

/// One recorded reply. An entry matches when its `prompt` equals the
/// prompt text, or else when its `step` and every key it sets agree with
/// the bundle's query (or fact, for leakage prompts). The most specific
/// match wins; ties go to the earliest entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<StepKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Simulated transport failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptEntry {
    fn score(&self, bundle: &PromptBundle) -> Option<usize> {
        if let Some(p) = &self.prompt {
            return (p == &bundle.text).then_some(usize::MAX);
        }
        if self.step.is_some_and(|s| s != bundle.step_kind) {
            return None;
        }
        let (s, r, t) = match (&bundle.query, &bundle.fact) {
            (Some(q), _) => (q.subject, q.relation, q.time),
            (None, Some(f)) => (f.subject, f.relation, f.time),
            (None, None) => return Some(usize::from(self.step.is_some())),
        };
        let mut score = usize::from(self.step.is_some());
        for (want, have) in [(self.subject, s), (self.relation, r), (self.time, t)] {
            match want {
                Some(w) if w != have => return None,
                Some(_) => score += 1,
                None => {}
            }
        }
        Some(score)
    }
}

/// Replays recorded replies from a JSONL script.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    entries: Vec<ScriptEntry>,
}

impl ScriptedMock {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries }
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let err = |message: String| ConfigError::Script {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry =
                serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            if entry.response.is_none() && entry.error.is_none() {
                return Err(err(format!("line {}: entry has neither response nor error", i + 1)));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }
}

impl ChatBackend for ScriptedMock {
    fn kind(&self) -> BackendKind {
        BackendKind::ScriptedMock
    }

    fn complete(&self, bundle: &PromptBundle, _: &GenerationParams) -> Result<BackendReply, BackendFailure> {
        let mut best: Option<(usize, &ScriptEntry)> = None;
        for entry in &self.entries {
            if let Some(score) = entry.score(bundle) {
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, entry));
                }
            }
        }
        let Some((_, entry)) = best else {
            return Err(BackendFailure {
                kind: FailureKind::Script,
                message: format!("no scripted reply for {} prompt", bundle.step_kind.as_str()),
                attempts: 1,
            });
        };
        match (&entry.response, &entry.error) {
            (_, Some(e)) => Err(BackendFailure {
                kind: FailureKind::Transport,
                message: e.clone(),
                attempts: 1,
            }),
            (Some(r), None) => ok(r.clone()),
            (None, None) => unreachable!("validated at load"),
        }
    }
}
