use serde::{Deserialize, Serialize};

use super::{CohConfig, PipelineError, Step1Selection};
use crate::gateway::{bounded_map, Gateway};
use crate::history::{HistoryChain, HistoryIndex};
use crate::kg::Query;
use crate::parse::{parse_id_selection, parse_ranked_answers, RankedAnswers, Resolver};
use crate::verbalize::{StepKind, Verbalizer};

/// Why a step did not use the model's reply as is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// The query subject has no earlier facts; nothing was asked.
    NoHistory,
    /// Selection was configured to take the newest histories.
    Recency,
    /// The call or the parse failed; the newest items were taken instead.
    RecencyAfterFailure,
    /// The answer call or parse failed; the query has no answers.
    EmptyAnswers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    /// 1-based step number.
    pub step: usize,
    pub kind: StepKind,
    /// Items offered to the model.
    pub candidates: usize,
    /// Local ids kept, in reply order. Empty for the answer step.
    pub selected: Vec<usize>,
    /// The chains kept at this step.
    pub chains: Vec<HistoryChain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Fallback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
}

/// Everything one query produced during the prompting phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query: Query,
    pub steps: Vec<StepTrace>,
    /// Chains the answer prompt was built from.
    pub chains: Vec<HistoryChain>,
    pub answers: RankedAnswers,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl QueryTrace {
    fn empty(query: Query) -> Self {
        Self {
            query,
            steps: Vec::new(),
            chains: Vec::new(),
            answers: RankedAnswers::default(),
            errors: Vec::new(),
        }
    }
}

struct Runner<'a> {
    index: HistoryIndex<'a>,
    verbalizer: &'a Verbalizer<'a>,
    gateway: &'a Gateway,
    config: &'a CohConfig,
}

fn newest(items: usize, n: usize) -> Vec<usize> {
    (0..items.min(n)).collect()
}

impl Runner<'_> {
    fn select(
        &self,
        step: usize,
        items: &[HistoryChain],
        query: &Query,
        trace: &mut QueryTrace,
    ) -> Result<StepTrace, PipelineError> {
        let n = self.config.n;
        let bundle = self.verbalizer.build_select_prompt(items, query, n, step)?;
        let mut st = StepTrace {
            step,
            kind: bundle.step_kind,
            candidates: items.len(),
            selected: Vec::new(),
            chains: Vec::new(),
            fallback: None,
            reply: None,
        };
        if step == 1 && self.config.step1_selection == Step1Selection::Recency {
            st.selected = newest(items.len(), n);
            st.fallback = Some(Fallback::Recency);
        } else {
            match self.gateway.complete(&bundle) {
                Ok(c) => {
                    match parse_id_selection(&c.text, &bundle, n) {
                        Ok(sel) => {
                            if !sel.dropped.is_empty() {
                                log::debug!("query {}: step {step} dropped {:?}", query.id, sel.dropped);
                            }
                            st.selected = sel.local_ids;
                        }
                        Err(e) => {
                            trace.errors.push(format!("step {step}: {e}"));
                            st.selected = newest(items.len(), n);
                            st.fallback = Some(Fallback::RecencyAfterFailure);
                        }
                    }
                    st.reply = Some(c.text);
                }
                Err(e) => {
                    trace.errors.push(format!("step {step}: {e}"));
                    st.selected = newest(items.len(), n);
                    st.fallback = Some(Fallback::RecencyAfterFailure);
                }
            }
        }
        st.chains = st.selected.iter().map(|&i| items[i].clone()).collect();
        Ok(st)
    }

    fn answer(&self, chains: &[HistoryChain], query: &Query, trace: &mut QueryTrace) -> Result<(), PipelineError> {
        let bundle = self.verbalizer.build_answer_prompt(chains, query)?;
        let mut st = StepTrace {
            step: self.config.k,
            kind: StepKind::Answer,
            candidates: chains.len(),
            selected: Vec::new(),
            chains: Vec::new(),
            fallback: None,
            reply: None,
        };
        let resolver = Resolver::new(self.verbalizer.vocab())
            .anonymized(self.verbalizer.is_anonymized())
            .fuzzy(self.config.fuzzy);
        match self.gateway.complete(&bundle) {
            Ok(c) => {
                match parse_ranked_answers(&c.text, &resolver) {
                    Ok(a) => trace.answers = a,
                    Err(e) => {
                        trace.errors.push(format!("step {}: {e}", self.config.k));
                        st.fallback = Some(Fallback::EmptyAnswers);
                    }
                }
                st.reply = Some(c.text);
            }
            Err(e) => {
                trace.errors.push(format!("step {}: {e}", self.config.k));
                st.fallback = Some(Fallback::EmptyAnswers);
            }
        }
        trace.steps.push(st);
        Ok(())
    }

    fn run_one(&self, query: &Query) -> Result<QueryTrace, PipelineError> {
        let mut trace = QueryTrace::empty(*query);
        let first = self
            .index
            .first_order_histories(query, self.config.first_order_limit);
        if first.is_empty() {
            trace.steps.push(StepTrace {
                step: 1,
                kind: StepKind::SelectFirstOrder,
                candidates: 0,
                selected: Vec::new(),
                chains: Vec::new(),
                fallback: Some(Fallback::NoHistory),
                reply: None,
            });
            return Ok(trace);
        }
        let mut items: Vec<HistoryChain> = first
            .iter()
            .map(|h| HistoryChain::single(h.quad_index))
            .collect();
        for step in 1..self.config.k {
            let st = self.select(step, &items, query, &mut trace)?;
            items = self.index.extend_chains(&st.chains, self.config.per_chain_cap)?;
            trace.steps.push(st);
        }
        self.answer(&items, query, &mut trace)?;
        trace.chains = items;
        Ok(trace)
    }
}

/// Runs the step loop for every query. Queries are processed by at most
/// `config.max_in_flight` workers, each issuing one call at a time, and
/// traces come back in query order. Model failures are recorded in the
/// trace; only errors in local data abort the run.
pub fn run_coh(
    verbalizer: &Verbalizer,
    gateway: &Gateway,
    queries: &[Query],
    config: &CohConfig,
) -> Result<Vec<QueryTrace>, PipelineError> {
    config.validate()?;
    let kg = verbalizer.kg();
    if !kg.is_augmented() {
        return Err(crate::kg::KgError::NotAugmented.into());
    }
    let runner = Runner {
        index: HistoryIndex::new(kg, config.history_scope),
        verbalizer,
        gateway,
        config,
    };
    bounded_map(queries, config.max_in_flight, |q| runner.run_one(q))
        .into_iter()
        .collect()
}
