//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use coh::eval::{metrics_csv, rank_of_truth};
use coh::fusion::{
    build_llm_scores, fuse, normalize_graph, position_to_score, FusionConfig, GraphNormalization,
    GraphScoreTable,
};
use coh::gateway::{BackendConfig, Gateway};
use coh::history::{HistoryChain, HistoryIndex, HistoryScope};
use coh::kg::{queries_from_test, Query, Vocabulary};
use coh::parse::{AnswerEntry, RankedAnswers};
use coh::pipeline::{
    ablate, run_coh, score_traces, sweep, AblationKind, AnswerShuffle, CohConfig, Dataset, QueryTrace,
    RunLabels, ScoreSettings, SweepParam,
};
use coh::verbalize::{format_time, TimeStyle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{argsort, brute_candidates, brute_extend, dense_kg, fixture, random_kg, strictly_monotone};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

fn position_scores() -> Outcome {
    let oracle = |p: f64, a: f64| 1.0 / (1.0 + (a * p).exp());
    let s1 = position_to_score(1, 0.3);
    let s2 = position_to_score(2, 0.3);
    ensure!((s1 - oracle(1.0, 0.3)).abs() < 1e-12, "position 1: {s1}");
    ensure!((s2 - oracle(2.0, 0.3)).abs() < 1e-12, "position 2: {s2}");
    ensure!(format!("{s1:.7}") == "0.4255575", "position 1 prints as {s1:.7}");
    ensure!(format!("{s2:.7}") == "0.3543437", "position 2 prints as {s2:.7}");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let p = rng.random_range(1..200usize);
        let a = rng.random_range(0.01..3.0f64);
        let (here, next) = (position_to_score(p, a), position_to_score(p + 1, a));
        ensure!(next < here, "not decreasing at position {p}, alpha {a}");
        ensure!(here > 0.0 && here < 0.5, "out of (0, 0.5) at position {p}, alpha {a}");
    }
    Ok(format!("{s1:.7}, {s2:.7}; 1000 monotone pairs"))
}

fn random_answers(rng: &mut ChaCha8Rng, entities: u32) -> RankedAnswers {
    let len = rng.random_range(0..15usize);
    let mut ids: Vec<u32> = (0..entities).collect();
    for i in 0..len {
        let j = rng.random_range(i..ids.len());
        ids.swap(i, j);
    }
    RankedAnswers {
        entries: ids[..len]
            .iter()
            .enumerate()
            .map(|(i, &e)| AnswerEntry {
                surface: format!("E{e}"),
                entity: Some(e),
                serial: i as u32 + 1,
                position: i + 1,
            })
            .collect(),
        dropped: vec![],
    }
}

fn random_graph_row(rng: &mut ChaCha8Rng, entities: u32) -> BTreeMap<u32, f64> {
    let k = rng.random_range(1..60usize);
    (0..k)
        .map(|_| (rng.random_range(0..entities), (rng.random_range(-50..50) as f64) / 7.0))
        .collect()
}

fn fusion_endpoints() -> Outcome {
    const E: u32 = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for q in 0..500 {
        let answers = random_answers(&mut rng, E);
        let row = random_graph_row(&mut rng, E);
        let llm = build_llm_scores(&answers, 0.3);

        let mut graph_dense = vec![0.0; E as usize];
        for (e, g) in normalize_graph(&row, GraphNormalization::MinMax) {
            graph_dense[e as usize] = g;
        }
        let mut llm_dense = vec![0.0; E as usize];
        for (e, l) in &llm {
            llm_dense[*e as usize] = *l;
        }
        for (w, expect) in [(1.0, argsort(&graph_dense)), (0.0, argsort(&llm_dense))] {
            let cfg = FusionConfig { alpha: 0.3, w, graph_normalization: GraphNormalization::MinMax };
            let got: Vec<u32> = fuse(&llm, Some(&row), &cfg, E as usize)
                .map_err(|e| e.to_string())?
                .order
                .iter()
                .map(|(e, _)| *e)
                .collect();
            ensure!(got == expect, "query {q}: w={w} ordering differs");
        }
    }
    Ok("500 queries x 200 entities, w=0 and w=1 exact".into())
}

fn chain_oracle() -> Outcome {
    let mut queries_checked = 0;
    let mut chains_checked = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let entities = rng.random_range(3..=50);
        let facts = rng.random_range(10..=200);
        let (kg, _) = random_kg(seed, entities, rng.random_range(1..6), facts, rng.random_range(3..40));
        let index = HistoryIndex::new(&kg, HistoryScope::AllSplits);
        for q in queries_from_test(&kg).map_err(|e| e.to_string())? {
            queries_checked += 1;
            for limit in [1, 5, 100] {
                let got: Vec<usize> = index
                    .first_order_histories(&q, limit)
                    .iter()
                    .map(|h| h.quad_index)
                    .collect();
                ensure!(
                    got == brute_candidates(&kg, q.subject, q.time, limit),
                    "seed {seed}, query {}: first-order list differs at limit {limit}",
                    q.id
                );
            }
            let first: Vec<HistoryChain> = brute_candidates(&kg, q.subject, q.time, 100)
                .into_iter()
                .map(HistoryChain::single)
                .collect();
            for cap in [1, 2, 3, 5] {
                let mut chains = first.clone();
                for order in 2..=4 {
                    let got = index.extend_chains(&chains, cap).map_err(|e| e.to_string())?;
                    let want = brute_extend(&kg, &chains, cap);
                    ensure!(got == want, "seed {seed}, query {}: order-{order} chains differ at cap {cap}", q.id);
                    for c in &got {
                        ensure!(strictly_monotone(&kg, c, &q), "seed {seed}: chain {:?} not monotone", c.links);
                        ensure!(c.is_valid_for(&kg, &q), "seed {seed}: chain {:?} rejected by the store", c.links);
                    }
                    chains_checked += got.len();
                    chains = got;
                }
            }
        }
    }
    Ok(format!("100 stores, {queries_checked} queries, {chains_checked} chains"))
}

fn oracle_run(p: f64, test_facts: usize, seed: u64) -> Result<(Vec<QueryTrace>, CohConfig, Vocabulary, Gateway), String> {
    let (kg, vocab) = dense_kg(seed, 50, test_facts);
    let mut cfg = CohConfig {
        n: 5,
        first_order_limit: 10,
        per_chain_cap: 2,
        backend: BackendConfig::OracleMock { hit_probability: p, seed: 0, answers: 5 },
        ..CohConfig::default()
    };
    cfg.fusion.w = 0.0;
    cfg.reseed(seed);
    let gateway = Gateway::from_config(&cfg.backend, cfg.generation, &vocab).map_err(|e| e.to_string())?;
    let queries = queries_from_test(&kg).map_err(|e| e.to_string())?;
    let verbalizer = coh::verbalize::Verbalizer::new(&kg, &vocab);
    let traces = run_coh(&verbalizer, &gateway, &queries, &cfg).map_err(|e| e.to_string())?;
    Ok((traces, cfg, vocab, gateway))
}

fn oracle_metrics() -> Outcome {
    let (traces, cfg, vocab, _) = oracle_run(0.7, 1000, 4)?;
    ensure!(traces.len() == 2000, "expected 2000 queries, got {}", traces.len());
    let settings = ScoreSettings::from_config(&cfg, vocab.num_entities());
    let m = score_traces(&traces, None, &settings).map_err(|e| e.to_string())?.metrics;
    let tol = 4.0 * (0.21f64 / 2000.0).sqrt();
    ensure!((m.hits1 - 0.7).abs() <= tol, "hits@1 {} outside 0.7 ± {tol:.4}", m.hits1);

    let (traces, cfg, vocab, _) = oracle_run(1.0, 1000, 4)?;
    let settings = ScoreSettings::from_config(&cfg, vocab.num_entities());
    let perfect = score_traces(&traces, None, &settings).map_err(|e| e.to_string())?.metrics;
    ensure!(perfect.mrr == 1.0, "perfect oracle MRR {}", perfect.mrr);
    Ok(format!("hits@1 {:.4} (tolerance {tol:.4}); perfect MRR {}", m.hits1, perfect.mrr))
}

const STEP1_IDS: [usize; 30] = [
    0, 1, 2, 5, 7, 8, 9, 10, 11, 14, 17, 21, 24, 25, 26, 27, 28, 30, 31, 32, 33, 34, 36, 37, 38, 39, 45, 49, 50, 56,
];

const FIRST_HISTORIES: [&str; 11] = [
    "0:[Government_(Nigeria) Engage_in_diplomatic_cooperation with Independent_Corrupt_Practices_Commission on the 339th day];",
    "1:[Government_(Nigeria) Threaten Education_(Nigeria) on the 338th day];",
    "2:[Government_(Nigeria) Criticize_or_denounce Boko_Haram on the 337th day];",
    "3:[Government_(Nigeria) Threaten Education_(Nigeria) on the 337th day];",
    "4:[Government_(Nigeria) Provide_aid for Citizen_(Nigeria) on the 337th day];",
    "5:[Government_(Nigeria) Make_optimistic_comment on Citizen_(Nigeria) on the 336th day];",
    "6:[Government_(Nigeria) Use_conventional_military_force to Boko_Haram on the 335th day];",
    "7:[Government_(Nigeria) Make_statement to Barack_Obama on the 333rd day];",
    "8:[Government_(Nigeria) Accuse Boko_Haram on the 332nd day];",
    "9:[Government_(Nigeria) Express_intent_to_engage_in_diplomatic_cooperation to Citizen_(Nigeria) on the 332nd day];",
    "10:[Government_(Nigeria) Engage_in_diplomatic_cooperation with Citizen_(Nigeria) on the 331st day];",
];

const SECOND_ORDER_LINES: [&str; 3] = [
    "Government_(Nigeria), Engage_in_diplomatic_cooperation with, Independent_Corrupt_Practices_Commission, on the 339th day; Independent_Corrupt_Practices_Commission, Arrest_or_detain_or_charge_with_legal_action to, Citizen_(Nigeria), on the 308th day;",
    "Government_(Nigeria), Criticize_or_denounce, Boko_Haram, on the 337th day; Boko_Haram, Use_conventional_military_force to, Citizen_(Nigeria), on the 336th day;",
    "Government_(Nigeria), Make_optimistic_comment on, Citizen_(Nigeria), on the 336th day; Citizen_(Nigeria), Make_an_appeal_or_request to, Member_of_the_Judiciary_(Nigeria), on the 331st day;",
];

fn nigeria() -> Result<(Dataset, CohConfig, Query), String> {
    let dir = fixture("nigeria");
    let data = Dataset::open(&dir).map_err(|e| e.to_string())?;
    let mut cfg = CohConfig {
        backend: BackendConfig::ScriptedMock { script: dir.join("script.jsonl") },
        max_in_flight: 1,
        ..CohConfig::default()
    };
    cfg.fusion.w = 0.0;
    let query = queries_from_test(&data.kg).map_err(|e| e.to_string())?[0];
    Ok((data, cfg, query))
}

fn scripted_replay() -> Outcome {
    let (data, cfg, query) = nigeria()?;
    let verbalizer = data.verbalizer(&cfg);
    let first: Vec<HistoryChain> = HistoryIndex::new(&data.kg, cfg.history_scope)
        .first_order_histories(&query, cfg.first_order_limit)
        .iter()
        .map(|h| HistoryChain::single(h.quad_index))
        .collect();
    let prompt = verbalizer.build_select_prompt(&first, &query, cfg.n, 1).map_err(|e| e.to_string())?;
    for line in FIRST_HISTORIES {
        ensure!(prompt.text.lines().any(|l| l == line), "step-1 prompt lacks {line:?}");
    }
    ensure!(
        prompt.text.contains("Government_(Nigeria), Make_an_appeal_or_request to, whom, on the 340th day?"),
        "step-1 query line differs"
    );

    let gateway = Gateway::from_config(&cfg.backend, cfg.generation, &data.vocab).map_err(|e| e.to_string())?;
    let traces = run_coh(&verbalizer, &gateway, &[query], &cfg).map_err(|e| e.to_string())?;
    let trace = &traces[0];
    ensure!(trace.errors.is_empty(), "trace errors: {:?}", trace.errors);
    ensure!(trace.steps[0].selected == STEP1_IDS, "step-1 ids {:?}", trace.steps[0].selected);

    let answer_prompt = verbalizer.build_answer_prompt(&trace.chains, &query).map_err(|e| e.to_string())?;
    for line in SECOND_ORDER_LINES {
        ensure!(answer_prompt.text.lines().any(|l| l == line), "answer prompt lacks {line:?}");
    }

    let member = data.vocab.entity_by_surface("Member_of_the_Judiciary_(Nigeria)").unwrap();
    let pos = trace.answers.position_of(member);
    ensure!(pos == Some(3), "parsed position {pos:?}");
    let settings = ScoreSettings::from_config(&cfg, data.vocab.num_entities());
    let scored = score_traces(&traces, None, &settings).map_err(|e| e.to_string())?;
    let rank = scored.per_query[0].rank;
    ensure!(rank == 3, "fused rank {rank}");
    Ok("30 ids verbatim, position 3, fused rank 3".into())
}

fn ablation_sanity() -> Outcome {
    let (traces, cfg, vocab, _) = oracle_run(1.0, 100, 6)?;
    let n = vocab.num_entities();
    let base = score_traces(&traces, None, &ScoreSettings::from_config(&cfg, n)).map_err(|e| e.to_string())?;
    let identity = CohConfig { answer_shuffle: AnswerShuffle::Identity, ..cfg.clone() };
    let same = score_traces(&traces, None, &ScoreSettings::from_config(&identity, n)).map_err(|e| e.to_string())?;
    ensure!(same == base, "identity permutation changed the metrics");
    ensure!(
        same.metrics.mrr.to_bits() == base.metrics.mrr.to_bits(),
        "identity permutation changed MRR bits"
    );
    let no_is = ablate(AblationKind::NoIs, &cfg).map_err(|e| e.to_string())?;
    let shuffled = score_traces(&traces, None, &ScoreSettings::from_config(&no_is, n)).map_err(|e| e.to_string())?;
    ensure!(
        shuffled.metrics.mrr < base.metrics.mrr,
        "shuffled MRR {} not below {}",
        shuffled.metrics.mrr,
        base.metrics.mrr
    );
    Ok(format!("baseline MRR {}, shuffled MRR {:.4}", base.metrics.mrr, shuffled.metrics.mrr))
}

fn sweep_determinism() -> Outcome {
    let (traces, cfg, vocab, gateway) = oracle_run(0.7, 100, 7)?;
    let n = vocab.num_entities();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut graph = GraphScoreTable::new();
    for t in &traces {
        for (e, s) in random_graph_row(&mut rng, n as u32) {
            graph.insert(t.query.id, e, s);
        }
    }
    let settings = ScoreSettings::from_config(&cfg, n);
    let labels = RunLabels { run_id: "accept", dataset: "dense", variant: "coh" };
    let calls = gateway.calls();
    let alphas = [0.1, 0.3, 0.5, 0.7, 0.9];
    let a = sweep(SweepParam::Alpha, &alphas, &traces, Some(&graph), &settings, labels).map_err(|e| e.to_string())?;
    let b = sweep(SweepParam::Alpha, &alphas, &traces, Some(&graph), &settings, labels).map_err(|e| e.to_string())?;
    ensure!(a.len() == 5, "{} rows", a.len());
    ensure!(metrics_csv(&a) == metrics_csv(&b), "alpha sweeps differ between runs");

    let w = sweep(SweepParam::W, &[0.0, 0.5, 1.0], &traces, Some(&graph), &settings, labels).map_err(|e| e.to_string())?;
    ensure!(gateway.calls() == calls, "sweeps issued {} gateway calls", gateway.calls() - calls);

    // Endpoints against rankings built by hand from one side only.
    let mut pure_llm = Vec::new();
    let mut pure_graph = Vec::new();
    for t in &traces {
        let truth = t.query.ground_truth;
        let mut l = vec![0.0; n];
        for (e, s) in build_llm_scores(&t.answers, cfg.fusion.alpha) {
            l[e as usize] = s;
        }
        let mut g = vec![0.0; n];
        if let Some(row) = graph.row(t.query.id) {
            for (e, s) in normalize_graph(row, GraphNormalization::MinMax) {
                g[e as usize] = s;
            }
        }
        let rank = |scores: &[f64]| argsort(scores).iter().position(|&e| e == truth).unwrap() + 1;
        pure_llm.push((t.query.id, rank(&l)));
        pure_graph.push((t.query.id, rank(&g)));
    }
    let llm_m = coh::eval::compute_metrics(&pure_llm).map_err(|e| e.to_string())?;
    let graph_m = coh::eval::compute_metrics(&pure_graph).map_err(|e| e.to_string())?;
    ensure!(w[0].mrr == llm_m.mrr && w[0].hits1 == llm_m.hits1, "w=0 row differs from the pure model ranking");
    ensure!(w[2].mrr == graph_m.mrr && w[2].hits10 == graph_m.hits10, "w=1 row differs from the pure graph ranking");

    // And the fused ranking agrees with `rank_of_truth` on one query.
    let t = &traces[0];
    let ranking = fuse(
        &build_llm_scores(&t.answers, cfg.fusion.alpha),
        graph.row(t.query.id),
        &FusionConfig { w: 1.0, ..cfg.fusion },
        n,
    )
    .map_err(|e| e.to_string())?;
    ensure!(rank_of_truth(&ranking, t.query.ground_truth).unwrap() == pure_graph[0].1, "rank mismatch");
    Ok("5 identical rows, 0 gateway calls, endpoints exact".into())
}

fn verbalization_fixtures() -> Outcome {
    let style = TimeStyle::ordinal(0);
    ensure!(format_time(152, &style) == "153rd day", "tick 152 -> {}", format_time(152, &style));
    ensure!(format_time(339, &style) == "340th day", "tick 339 -> {}", format_time(339, &style));

    let (data, cfg, query) = nigeria()?;
    let verbalizer = data.verbalizer(&cfg);
    let first: Vec<HistoryChain> = HistoryIndex::new(&data.kg, cfg.history_scope)
        .first_order_histories(&query, cfg.first_order_limit)
        .iter()
        .map(|h| HistoryChain::single(h.quad_index))
        .collect();
    let prompt = verbalizer.build_select_prompt(&first, &query, 30, 1).map_err(|e| e.to_string())?;
    let opening = "There is a given text consisting of multiple historical events in the form of \"{id}:[{subject} {relation} {object} {time}];\". And there is a query in the form of: \"{subject} {relation} {whom} time}?\" If you must infer several {object} that you think may be the answer to the given query based on the given historical events, what important historical events do you base your predictions on? Please list the top 30 most important histories and output their {id}.";
    ensure!(prompt.text.lines().next() == Some(opening), "opening line differs:\n{}", prompt.text.lines().next().unwrap_or(""));

    let data = Dataset::open(&fixture("leakage")).map_err(|e| e.to_string())?;
    let verbalizer = data.verbalizer(&CohConfig::default());
    let calendar = data.kg.calendar().ok_or("leakage fixture has no calendar")?;
    let fact = data
        .kg
        .facts()
        .iter()
        .find(|f| f.split == coh::kg::Split::Test && f.quad.subject == 0)
        .map(|f| f.quad)
        .ok_or("no test fact for entity 0")?;
    let leak = verbalizer
        .build_leakage_prompt(&fact, calendar.date_of(fact.time))
        .map_err(|e| e.to_string())?;
    let expected = "Do you know the fact that United Arab Emirates reduced or broke diplomatic relations with Qatar on 2014-12-04?";
    ensure!(leak.text == expected, "leakage prompt: {:?}", leak.text);
    Ok("ordinals, opening line and leakage prompt byte-exact".into())
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "position score fixture", Duration::from_secs(1), position_scores),
        (2, "fusion endpoints", Duration::from_secs(5), fusion_endpoints),
        (3, "chain oracle equivalence", Duration::from_secs(30), chain_oracle),
        (4, "metric oracle", Duration::from_secs(20), oracle_metrics),
        (5, "scripted replay", Duration::from_secs(1), scripted_replay),
        (6, "ablation sanity", Duration::from_secs(10), ablation_sanity),
        (7, "sweep determinism", Duration::from_secs(10), sweep_determinism),
        (8, "verbalization fixtures", Duration::from_secs(1), verbalization_fixtures),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            })
            .and_then(|detail| {
                let took = start.elapsed();
                if took > budget {
                    Err(format!("{detail}; took {took:.2?}, budget {budget:?}"))
                } else {
                    Ok(detail)
                }
            });
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS [{ms} ms] {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{ms} ms] {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
