//! Raw-setting ranking metrics, the known-fact filter, and report writers.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusedRanking;
use crate::gateway::Gateway;
use crate::kg::{EntityId, KgError, Quadruple, Query, Split, TemporalKg};
use crate::verbalize::{VerbalizeError, Verbalizer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ranks to evaluate")]
    Empty,
    #[error("ground truth {0} is not in the ranking")]
    MissingTruth(EntityId),
    #[error("filtered fact {0} is not a test fact")]
    NotInTest(Quadruple),
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
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Verbalize(#[from] VerbalizeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// 1-based rank of `truth`: one plus the number of entities ordered before it.
pub fn rank_of_truth(ranking: &FusedRanking, truth: EntityId) -> Result<usize, EvalError> {
    ranking
        .order
        .iter()
        .position(|(e, _)| *e == truth)
        .map(|i| i + 1)
        .ok_or(EvalError::MissingTruth(truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub per_query_ranks: Vec<(usize, usize)>,
    pub query_count: usize,
}

pub fn compute_metrics(ranks: &[(usize, usize)]) -> Result<EvalResult, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = ranks.len() as f64;
    let hits = |k: usize| ranks.iter().filter(|(_, r)| *r <= k).count() as f64 / n;
    Ok(EvalResult {
        mrr: ranks.iter().map(|(_, r)| 1.0 / *r as f64).sum::<f64>() / n,
        hits1: hits(1),
        hits3: hits(3),
        hits10: hits(10),
        per_query_ranks: ranks.to_vec(),
        query_count: ranks.len(),
    })
}

/// Test facts to drop from evaluation, as original (non-mirrored) quadruples.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterList {
    pub facts: BTreeSet<Quadruple>,
}

impl FilterList {
    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// One `subject<TAB>relation<TAB>object<TAB>tick` line per fact.
    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = String::new();
        for q in &self.facts {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", q.subject, q.relation, q.object, q.time));
        }
        fs::write(path, out).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut facts = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let nums: Result<Vec<u32>, _> = line.split('\t').map(|f| f.trim().parse()).collect();
            match nums.as_deref() {
                Ok([s, r, o, t]) => {
                    facts.insert(Quadruple::new(*s, *r, *o, *t));
                }
                _ => {
                    return Err(EvalError::Malformed {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: "expected four tab-separated integers".into(),
                    })
                }
            }
        }
        Ok(Self { facts })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakageVerdict {
    Yes,
    No,
}

/// Reads the first alphabetic token. Anything but yes or no counts as no.
pub fn classify_leakage_reply(reply: &str) -> (LeakageVerdict, bool) {
    let token = reply
        .split(|c: char| !c.is_alphabetic())
        .find(|t| !t.is_empty())
        .unwrap_or("")
        .to_lowercase();
    match token.as_str() {
        "yes" => (LeakageVerdict::Yes, true),
        "no" => (LeakageVerdict::No, true),
        _ => (LeakageVerdict::No, false),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub filter: FilterList,
    /// Facts whose prompt failed at the transport level.
    pub unchecked: Vec<Quadruple>,
    /// Facts whose reply was neither yes nor no.
    pub ambiguous: Vec<Quadruple>,
    pub checked: usize,
}

/// Asks about every original test fact and collects the ones the model
/// claims to know.
pub fn run_leakage_check(
    kg: &TemporalKg,
    verbalizer: &Verbalizer,
    gateway: &Gateway,
    max_in_flight: usize,
) -> Result<LeakageReport, EvalError> {
    let calendar = kg.calendar().ok_or(KgError::NoCalendar(0))?;
    let facts: Vec<Quadruple> = kg.split_facts(Split::Test).map(|f| f.quad).collect();
    let bundles = facts
        .iter()
        .map(|q| verbalizer.build_leakage_prompt(q, calendar.date_of(q.time)))
        .collect::<Result<Vec<_>, _>>()?;
    let replies = gateway.complete_batch(&bundles, max_in_flight);
    let mut report = LeakageReport::default();
    for (quad, reply) in facts.into_iter().zip(replies) {
        match reply {
            Ok(c) => {
                report.checked += 1;
                let (verdict, clear) = classify_leakage_reply(&c.text);
                if !clear {
                    log::warn!("leakage reply for {quad} is neither yes nor no: {:?}", c.text);
                    report.ambiguous.push(quad);
                }
                if verdict == LeakageVerdict::Yes {
                    report.filter.facts.insert(quad);
                }
            }
            Err(e) => {
                log::warn!("leakage check for {quad} failed: {e}");
                report.unchecked.push(quad);
            }
        }
    }
    Ok(report)
}

/// Drops both queries derived from every filtered fact.
pub fn apply_filter(
    queries: &[Query],
    filter: &FilterList,
    kg: &TemporalKg,
) -> Result<Vec<Query>, EvalError> {
    if let Some(q) = filter.facts.iter().find(|q| !kg.contains(q, Split::Test)) {
        return Err(EvalError::NotInTest(*q));
    }
    Ok(queries
        .iter()
        .filter(|q| !filter.facts.contains(&q.source))
        .copied()
        .collect())
}

/// One row of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub dataset: String,
    pub variant: String,
    pub alpha: f64,
    pub w: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
}

pub const METRICS_HEADER: &str = "run_id,dataset,variant,alpha,w,mrr,hits1,hits3,hits10,n_queries";

impl MetricsRow {
    pub fn new(run_id: &str, dataset: &str, variant: &str, alpha: f64, w: f64, r: &EvalResult) -> Self {
        Self {
            run_id: run_id.into(),
            dataset: dataset.into(),
            variant: variant.into(),
            alpha,
            w,
            mrr: r.mrr,
            hits1: r.hits1,
            hits3: r.hits3,
            hits10: r.hits10,
            n_queries: r.query_count,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            csv_field(&self.run_id),
            csv_field(&self.dataset),
            csv_field(&self.variant),
            self.alpha,
            self.w,
            self.mrr,
            self.hits1,
            self.hits3,
            self.hits10,
            self.n_queries
        )
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: usize,
    pub rank: usize,
    pub top10: Vec<(EntityId, f64)>,
}

pub fn write_query_results(path: &Path, results: &[QueryResult]) -> Result<(), EvalError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    for r in results {
        let line = serde_json::to_string(r).expect("query results serialize");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Fact;

    #[test]
    fn metric_arithmetic() {
        let r = compute_metrics(&[(0, 1), (1, 1), (2, 1)]).unwrap();
        assert_eq!((r.mrr, r.hits1, r.hits3, r.hits10), (1.0, 1.0, 1.0, 1.0));
        let r = compute_metrics(&[(0, 4)]).unwrap();
        assert_eq!((r.mrr, r.hits1, r.hits3, r.hits10), (0.25, 0.0, 0.0, 1.0));
        assert!(matches!(compute_metrics(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn tie_at_top_ranks_behind_lower_ids() {
        let ranking = FusedRanking {
            order: vec![(0, 0.9), (1, 0.9), (2, 0.9), (5, 0.9), (3, 0.1)],
        };
        assert_eq!(rank_of_truth(&ranking, 5).unwrap(), 4);
    }

    #[test]
    fn leakage_classification() {
        assert_eq!(classify_leakage_reply("Yes."), (LeakageVerdict::Yes, true));
        assert_eq!(classify_leakage_reply("  no, I do not"), (LeakageVerdict::No, true));
        assert_eq!(classify_leakage_reply("YES"), (LeakageVerdict::Yes, true));
        assert_eq!(classify_leakage_reply("Maybe"), (LeakageVerdict::No, false));
        assert_eq!(classify_leakage_reply("Yesterday"), (LeakageVerdict::No, false));
    }

    #[test]
    fn filter_removes_both_directions() {
        let facts = vec![
            Fact { quad: Quadruple::new(0, 0, 1, 0), split: Split::Train },
            Fact { quad: Quadruple::new(0, 0, 1, 5), split: Split::Test },
            Fact { quad: Quadruple::new(1, 0, 2, 5), split: Split::Test },
        ];
        let vocab = crate::kg::Vocabulary::new(vec!["a".into(), "b".into(), "c".into()], vec!["r".into()]).unwrap();
        let kg = TemporalKg::from_facts(facts, 1).unwrap();
        let (kg, _) = crate::kg::augment_reversed(kg, vocab).unwrap();
        let queries = crate::kg::queries_from_test(&kg).unwrap();
        assert_eq!(apply_filter(&queries, &FilterList::default(), &kg).unwrap(), queries);
        let filter = FilterList { facts: BTreeSet::from([Quadruple::new(0, 0, 1, 5)]) };
        assert_eq!(apply_filter(&queries, &filter, &kg).unwrap().len(), 2);
        let bad = FilterList { facts: BTreeSet::from([Quadruple::new(0, 0, 1, 0)]) };
        assert!(matches!(apply_filter(&queries, &bad, &kg), Err(EvalError::NotInTest(_))));
    }

    #[test]
    fn filter_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("filter.txt");
        let f = FilterList { facts: BTreeSet::from([Quadruple::new(3, 1, 4, 15), Quadruple::new(9, 2, 6, 5)]) };
        f.write(&p).unwrap();
        assert_eq!(FilterList::read(&p).unwrap(), f);
    }

    #[test]
    fn csv_header_and_row() {
        let r = compute_metrics(&[(0, 2)]).unwrap();
        let csv = metrics_csv(&[MetricsRow::new("r1", "toy", "coh", 0.3, 0.35, &r)]);
        assert_eq!(csv, format!("{METRICS_HEADER}\nr1,toy,coh,0.3,0.35,0.500000,0.000000,1.000000,1.000000,1\n"));
    }
}
