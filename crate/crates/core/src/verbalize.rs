//! Rendering facts, chains and queries into prompt text.
//!
//! Every prompt is produced from a plain-text template with `{placeholder}`
//! tokens. Only the placeholders a template kind knows about are replaced;
//! any other `{...}` text (the templates talk about `{id}`, `{object}` and
//! so on) is emitted literally.
//!
//! Times are rendered as ordinal day counts relative to the dataset origin,
//! so tick `0` is the "1st day". The leakage prompt is the one place where
//! real calendar dates appear.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::HistoryChain;
use crate::kg::{EntityId, Quadruple, Query, RelationId, TemporalKg, Tick, Vocabulary};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerbalizeError {
    #[error("unknown entity id {0}")]
    UnknownEntity(EntityId),
    #[error("unknown relation id {0}")]
    UnknownRelation(RelationId),
    #[error("nothing to select from")]
    NothingToSelect,
    #[error("no chains to answer from")]
    NoChains,
    #[error("template {path}: {message}")]
    Template { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// "153rd day"
    #[default]
    OrdinalDay,
    /// "153 day"
    AnonymizedInteger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeStyle {
    pub mode: TimeMode,
    pub origin: Tick,
    /// Ticks per day (1 for day-stamped data, 24 for hour-stamped).
    pub granularity: u32,
}

impl TimeStyle {
    pub fn ordinal(origin: Tick) -> Self {
        Self {
            mode: TimeMode::OrdinalDay,
            origin,
            granularity: 1,
        }
    }

    /// 1-based day index of a tick.
    pub fn day_index(&self, tick: Tick) -> u64 {
        u64::from(tick.saturating_sub(self.origin) / self.granularity.max(1)) + 1
    }
}

pub fn ordinal_suffix(n: u64) -> &'static str {
    if (11..=13).contains(&(n % 100)) {
        return "th";
    }
    match n % 10 {
        1 => "st",
        2 => "nd",
        3 => "rd",
        _ => "th",
    }
}

/// `"153rd day"` for ordinal mode, `"153 day"` for the integer mode.
pub fn format_time(tick: Tick, style: &TimeStyle) -> String {
    let day = style.day_index(tick);
    match style.mode {
        TimeMode::OrdinalDay => format!("{day}{} day", ordinal_suffix(day)),
        TimeMode::AnonymizedInteger => format!("{day} day"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    SelectFirstOrder,
    SelectChain,
    Answer,
    Leakage,
    Explain,
}

impl StepKind {
    pub fn is_select(self) -> bool {
        matches!(self, StepKind::SelectFirstOrder | StepKind::SelectChain)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::SelectFirstOrder => "select_first_order",
            StepKind::SelectChain => "select_chain",
            StepKind::Answer => "answer",
            StepKind::Leakage => "leakage",
            StepKind::Explain => "explain",
        }
    }
}

/// A rendered prompt plus what is needed to interpret the reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub text: String,
    pub step_kind: StepKind,
    /// Items shown in the prompt. For select kinds, item `i` carries local
    /// id `i`; for answer and explain prompts these are the chains shown.
    pub items: Vec<HistoryChain>,
    /// Selection budget `n` for select kinds.
    pub limit: Option<usize>,
    pub query: Option<Query>,
    /// The fact a leakage prompt asks about.
    pub fact: Option<Quadruple>,
    pub anonymized: bool,
    /// Entities appearing as link objects, in order of first appearance.
    pub mentioned_entities: Vec<EntityId>,
}

impl PromptBundle {
    /// `local_id → chain` for select prompts; empty otherwise.
    pub fn id_map(&self) -> &[HistoryChain] {
        if self.step_kind.is_select() {
            &self.items
        } else {
            &[]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub select_first_order: String,
    pub select_chain: String,
    pub answer: String,
    pub explain: String,
    pub leakage: String,
}

fn strip_final_newline(s: &str) -> String {
    s.strip_suffix('\n').unwrap_or(s).to_string()
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            select_first_order: strip_final_newline(include_str!("../templates/select_first_order.txt")),
            select_chain: strip_final_newline(include_str!("../templates/select_chain.txt")),
            answer: strip_final_newline(include_str!("../templates/answer.txt")),
            explain: strip_final_newline(include_str!("../templates/explain.txt")),
            leakage: strip_final_newline(include_str!("../templates/leakage.txt")),
        }
    }
}

impl Templates {
    /// Defaults, overridden by any `<step_kind>.txt` file found in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, VerbalizeError> {
        let mut t = Self::default();
        for (name, slot) in [
            ("select_first_order", &mut t.select_first_order),
            ("select_chain", &mut t.select_chain),
            ("answer", &mut t.answer),
            ("explain", &mut t.explain),
            ("leakage", &mut t.leakage),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| VerbalizeError::Template {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                *slot = strip_final_newline(&text);
            }
        }
        Ok(t)
    }
}

/// Single-pass `{name}` substitution. Unknown names stay literal, and
/// substituted values are never rescanned.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let known = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (v, close))
        });
        match known {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders prompts over one store and vocabulary.
#[derive(Debug, Clone)]
pub struct Verbalizer<'a> {
    kg: &'a TemporalKg,
    vocab: &'a Vocabulary,
    style: TimeStyle,
    anonymize: bool,
    phrases: BTreeMap<RelationId, String>,
    leakage_phrases: BTreeMap<RelationId, String>,
    templates: Templates,
}

impl<'a> Verbalizer<'a> {
    pub fn new(kg: &'a TemporalKg, vocab: &'a Vocabulary) -> Self {
        Self {
            kg,
            vocab,
            style: TimeStyle::ordinal(kg.time_origin()),
            anonymize: false,
            phrases: BTreeMap::new(),
            leakage_phrases: BTreeMap::new(),
            templates: Templates::default(),
        }
    }

    pub fn with_time_style(mut self, style: TimeStyle) -> Self {
        self.style = style;
        self
    }

    pub fn anonymized(mut self, on: bool) -> Self {
        self.anonymize = on;
        self
    }

    /// Relation phrases carrying prepositions, e.g. `"Sign agreement with"`.
    /// Keys live in the augmented relation space.
    pub fn with_phrases(mut self, phrases: BTreeMap<RelationId, String>) -> Self {
        self.phrases = phrases;
        self
    }

    /// Natural-language relation phrases for leakage questions.
    pub fn with_leakage_phrases(mut self, phrases: BTreeMap<RelationId, String>) -> Self {
        self.leakage_phrases = phrases;
        self
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    pub fn style(&self) -> &TimeStyle {
        &self.style
    }

    pub fn is_anonymized(&self) -> bool {
        self.anonymize
    }

    pub fn kg(&self) -> &'a TemporalKg {
        self.kg
    }

    pub fn vocab(&self) -> &'a Vocabulary {
        self.vocab
    }

    pub fn entity_surface(&self, id: EntityId) -> Result<String, VerbalizeError> {
        let name = self
            .vocab
            .entity_name(id)
            .ok_or(VerbalizeError::UnknownEntity(id))?;
        Ok(if self.anonymize {
            id.to_string()
        } else {
            name.to_string()
        })
    }

    pub fn relation_surface(&self, id: RelationId) -> Result<String, VerbalizeError> {
        let name = self
            .vocab
            .relation_name(id)
            .ok_or(VerbalizeError::UnknownRelation(id))?;
        Ok(if self.anonymize {
            id.to_string()
        } else {
            self.phrases.get(&id).cloned().unwrap_or(name)
        })
    }

    fn fact_parts(&self, quad: &Quadruple) -> Result<[String; 4], VerbalizeError> {
        Ok([
            self.entity_surface(quad.subject)?,
            self.relation_surface(quad.relation)?,
            self.entity_surface(quad.object)?,
            format_time(quad.time, &self.style),
        ])
    }

    /// `"Alice Meet_with Bob on the 3rd day"`
    pub fn verbalize_fact(&self, quad: &Quadruple) -> Result<String, VerbalizeError> {
        let [s, r, o, t] = self.fact_parts(quad)?;
        Ok(format!("{s} {r} {o} on the {t}"))
    }

    /// `"Alice, Meet_with, Bob, on the 3rd day;"`
    pub fn verbalize_fact_fields(&self, quad: &Quadruple) -> Result<String, VerbalizeError> {
        let [s, r, o, t] = self.fact_parts(quad)?;
        Ok(format!("{s}, {r}, {o}, on the {t};"))
    }

    fn query_vars(&self, query: &Query) -> Result<[String; 3], VerbalizeError> {
        Ok([
            self.entity_surface(query.subject)?,
            self.relation_surface(query.relation)?,
            format!("on the {}", format_time(query.time, &self.style)),
        ])
    }

    fn mentioned(&self, chains: &[HistoryChain]) -> Vec<EntityId> {
        let mut seen = std::collections::HashSet::new();
        chains
            .iter()
            .flat_map(|c| c.links.iter())
            .map(|&i| self.kg.fact(i).quad.object)
            .filter(|e| seen.insert(*e))
            .collect()
    }

    /// Step `step_index` selection prompt. Step 1 lists single facts; later
    /// steps list chains, links comma-separated inside the brackets.
    pub fn build_select_prompt(
        &self,
        items: &[HistoryChain],
        query: &Query,
        n: usize,
        step_index: usize,
    ) -> Result<PromptBundle, VerbalizeError> {
        if items.is_empty() {
            return Err(VerbalizeError::NothingToSelect);
        }
        let mut lines = Vec::with_capacity(items.len());
        for (id, chain) in items.iter().enumerate() {
            let facts = chain
                .links
                .iter()
                .map(|&i| self.verbalize_fact(&self.kg.fact(i).quad))
                .collect::<Result<Vec<_>, _>>()?;
            lines.push(format!("{id}:[{}];", facts.join(", ")));
        }
        let (template, kind) = if step_index <= 1 {
            (&self.templates.select_first_order, StepKind::SelectFirstOrder)
        } else {
            (&self.templates.select_chain, StepKind::SelectChain)
        };
        let [qs, qr, qt] = self.query_vars(query)?;
        let n_text = n.to_string();
        let block = lines.join("\n");
        let text = render_template(
            template,
            &[
                ("n", &n_text),
                ("history_block", &block),
                ("query_subject", &qs),
                ("query_relation", &qr),
                ("query_time", &qt),
            ],
        );
        Ok(PromptBundle {
            text,
            step_kind: kind,
            items: items.to_vec(),
            limit: Some(n),
            query: Some(*query),
            fact: None,
            anonymized: self.anonymize,
            mentioned_entities: self.mentioned(items),
        })
    }

    fn chain_block(&self, chains: &[HistoryChain]) -> Result<String, VerbalizeError> {
        let mut lines = Vec::with_capacity(chains.len());
        for chain in chains {
            let facts = chain
                .links
                .iter()
                .map(|&i| self.verbalize_fact_fields(&self.kg.fact(i).quad))
                .collect::<Result<Vec<_>, _>>()?;
            lines.push(facts.join(" "));
        }
        Ok(lines.join("\n"))
    }

    fn answer_like(
        &self,
        chains: &[HistoryChain],
        query: &Query,
        kind: StepKind,
    ) -> Result<PromptBundle, VerbalizeError> {
        if chains.is_empty() {
            return Err(VerbalizeError::NoChains);
        }
        let template = match kind {
            StepKind::Explain => &self.templates.explain,
            _ => &self.templates.answer,
        };
        let [qs, qr, qt] = self.query_vars(query)?;
        let block = self.chain_block(chains)?;
        let text = render_template(
            template,
            &[
                ("history_block", &block),
                ("query_subject", &qs),
                ("query_relation", &qr),
                ("query_time", &qt),
            ],
        );
        Ok(PromptBundle {
            text,
            step_kind: kind,
            items: chains.to_vec(),
            limit: None,
            query: Some(*query),
            fact: None,
            anonymized: self.anonymize,
            mentioned_entities: self.mentioned(chains),
        })
    }

    /// Final-step prompt asking for a ranked list of answers.
    pub fn build_answer_prompt(
        &self,
        chains: &[HistoryChain],
        query: &Query,
    ) -> Result<PromptBundle, VerbalizeError> {
        self.answer_like(chains, query, StepKind::Answer)
    }

    /// Like the answer prompt, plus a request to justify each answer.
    pub fn build_explanation_prompt(
        &self,
        chains: &[HistoryChain],
        query: &Query,
    ) -> Result<PromptBundle, VerbalizeError> {
        self.answer_like(chains, query, StepKind::Explain)
    }

    /// Asks whether the model already knows a fact. Uses real names (spaces
    /// for underscores) and the real calendar date, never anonymized.
    pub fn build_leakage_prompt(
        &self,
        quad: &Quadruple,
        date: NaiveDate,
    ) -> Result<PromptBundle, VerbalizeError> {
        let plain = |s: &str| s.replace('_', " ");
        let entity = |id| {
            self.vocab
                .entity_name(id)
                .map(plain)
                .ok_or(VerbalizeError::UnknownEntity(id))
        };
        let relation = match self
            .leakage_phrases
            .get(&quad.relation)
            .or_else(|| self.phrases.get(&quad.relation))
        {
            Some(p) => plain(p),
            None => plain(
                &self
                    .vocab
                    .relation_name(quad.relation)
                    .ok_or(VerbalizeError::UnknownRelation(quad.relation))?,
            ),
        };
        let (s, o) = (entity(quad.subject)?, entity(quad.object)?);
        let date = date.format("%Y-%m-%d").to_string();
        let text = render_template(
            &self.templates.leakage,
            &[
                ("fact_subject", &s),
                ("fact_relation", &relation),
                ("fact_object", &o),
                ("fact_date", &date),
            ],
        );
        Ok(PromptBundle {
            text,
            step_kind: StepKind::Leakage,
            items: Vec::new(),
            limit: None,
            query: None,
            fact: Some(*quad),
            anonymized: false,
            mentioned_entities: Vec::new(),
        })
    }
}
