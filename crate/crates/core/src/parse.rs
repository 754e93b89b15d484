//! Turning model replies into id selections and ranked entity answers.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{normalize_surface, EntityId, Vocabulary};
use crate::verbalize::PromptBundle;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("reply contains no usable id")]
    EmptySelection(IdSelection),
    #[error("reply contains no numbered answer line")]
    EmptyAnswers,
    #[error("bundle is not a selection prompt")]
    NotSelect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Duplicate,
    OutOfRange,
    OverLimit,
    Unparseable,
    Unresolved,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdSelection {
    pub local_ids: Vec<usize>,
    pub dropped: Vec<(String, DropReason)>,
}

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());
static NUMBERED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(\d+)\s*[.)]\s*(.*?)\s*$").unwrap());

/// Pulls every integer out of `reply`, in order, keeping those that name an
/// item of `bundle`, once each, up to `n`.
pub fn parse_id_selection(
    reply: &str,
    bundle: &PromptBundle,
    n: usize,
) -> Result<IdSelection, ParseError> {
    if !bundle.step_kind.is_select() {
        return Err(ParseError::NotSelect);
    }
    let range = bundle.id_map().len();
    let mut sel = IdSelection::default();
    let mut seen = HashSet::new();
    for m in INTEGER.find_iter(reply) {
        let token = m.as_str().to_string();
        let reason = match token.parse::<usize>() {
            Err(_) => Some(DropReason::Unparseable),
            Ok(id) if id >= range => Some(DropReason::OutOfRange),
            Ok(id) if !seen.insert(id) => Some(DropReason::Duplicate),
            Ok(_) if sel.local_ids.len() >= n => Some(DropReason::OverLimit),
            Ok(id) => {
                sel.local_ids.push(id);
                None
            }
        };
        if let Some(r) = reason {
            sel.dropped.push((token, r));
        }
    }
    if sel.local_ids.is_empty() {
        return Err(ParseError::EmptySelection(sel));
    }
    Ok(sel)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerEntry {
    pub surface: String,
    pub entity: Option<EntityId>,
    /// The number the model printed in front of the answer.
    pub serial: u32,
    /// 1-based position after deduplication. Scoring uses this.
    pub position: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedAnswers {
    pub entries: Vec<AnswerEntry>,
    pub dropped: Vec<(String, DropReason)>,
}

impl RankedAnswers {
    pub fn resolved(&self) -> impl Iterator<Item = (EntityId, usize)> + '_ {
        self.entries
            .iter()
            .filter_map(|e| e.entity.map(|id| (id, e.position)))
    }

    pub fn position_of(&self, entity: EntityId) -> Option<usize> {
        self.resolved().find(|(e, _)| *e == entity).map(|(_, p)| p)
    }

    /// `Possible answers:` followed by one numbered line per entry.
    pub fn render(&self) -> String {
        let mut out = String::from("Possible answers:");
        for e in &self.entries {
            out.push_str(&format!("\n{}. {}", e.position, e.surface));
        }
        out
    }
}

/// How answer surfaces are matched to entities.
#[derive(Debug, Clone, Copy)]
pub struct Resolver<'a> {
    vocab: &'a Vocabulary,
    anonymized: bool,
    fuzzy: bool,
}

impl<'a> Resolver<'a> {
    pub fn new(vocab: &'a Vocabulary) -> Self {
        Self {
            vocab,
            anonymized: false,
            fuzzy: false,
        }
    }

    /// Accept bare entity ids as answers.
    pub fn anonymized(mut self, on: bool) -> Self {
        self.anonymized = on;
        self
    }

    /// Fall back to a unique match within edit distance 2.
    pub fn fuzzy(mut self, on: bool) -> Self {
        self.fuzzy = on;
        self
    }

    pub fn resolve(&self, surface: &str) -> Option<EntityId> {
        if self.anonymized {
            if let Ok(id) = surface.trim().parse::<EntityId>() {
                return ((id as usize) < self.vocab.num_entities()).then_some(id);
            }
        }
        if let Some(id) = self.vocab.entity_by_surface(surface) {
            return Some(id);
        }
        if !self.fuzzy {
            return None;
        }
        let key = normalize_surface(surface);
        let mut found = None;
        for (name, id) in self.vocab.normalized_entities() {
            if strsim::levenshtein(&key, name) <= 2 {
                if found.is_some() {
                    return None;
                }
                found = Some(id);
            }
        }
        found
    }
}

/// Collects `"<int>. <surface>"` lines in order. Duplicates (same entity,
/// or same normalized surface when unresolved) keep their first occurrence.
/// Unresolved surfaces stay in the list but are also reported in `dropped`.
pub fn parse_ranked_answers(reply: &str, resolver: &Resolver) -> Result<RankedAnswers, ParseError> {
    let mut out = RankedAnswers::default();
    let mut seen_ids = HashSet::new();
    let mut seen_unresolved = HashSet::new();
    for line in reply.lines() {
        let Some(caps) = NUMBERED.captures(line) else {
            continue;
        };
        let surface = caps[2].to_string();
        if surface.is_empty() {
            continue;
        }
        let Ok(serial) = caps[1].parse::<u32>() else {
            out.dropped.push((surface, DropReason::Unparseable));
            continue;
        };
        let entity = resolver.resolve(&surface);
        let fresh = match entity {
            Some(id) => seen_ids.insert(id),
            None => seen_unresolved.insert(normalize_surface(&surface)),
        };
        if !fresh {
            out.dropped.push((surface, DropReason::Duplicate));
            continue;
        }
        if entity.is_none() {
            log::debug!("unresolved answer surface {surface:?}");
            out.dropped.push((surface.clone(), DropReason::Unresolved));
        }
        let position = out.entries.len() + 1;
        out.entries.push(AnswerEntry {
            surface,
            entity,
            serial,
            position,
        });
    }
    if out.entries.is_empty() {
        return Err(ParseError::EmptyAnswers);
    }
    Ok(out)
}
