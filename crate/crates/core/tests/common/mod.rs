//! Helpers shared by the integration tests: seeded toy stores and
//! brute-force reference implementations.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use coh::history::HistoryChain;
use coh::kg::{augment_reversed, Fact, Quadruple, Query, Split, TemporalKg, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn vocab(entities: usize, relations: usize) -> Vocabulary {
    Vocabulary::new(
        (0..entities).map(|i| format!("E{i}")).collect(),
        (0..relations).map(|i| format!("R{i}")).collect(),
    )
    .unwrap()
}

/// A random augmented store. Splits are assigned at random, so histories
/// interleave train, valid and test facts.
pub fn random_kg(seed: u64, entities: u32, relations: u32, facts: usize, ticks: u32) -> (TemporalKg, Vocabulary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < facts {
        let q = Quadruple::new(
            rng.random_range(0..entities),
            rng.random_range(0..relations),
            rng.random_range(0..entities),
            rng.random_range(0..ticks),
        );
        if !seen.insert(q) {
            continue;
        }
        let split = match rng.random_range(0..10) {
            0..=6 => Split::Train,
            7 => Split::Valid,
            _ => Split::Test,
        };
        out.push(Fact { quad: q, split });
    }
    if !out.iter().any(|f| f.split == Split::Test) {
        out[0].split = Split::Test;
    }
    let kg = TemporalKg::from_facts(out, relations).unwrap();
    augment_reversed(kg, vocab(entities as usize, relations as usize)).unwrap()
}

/// A store where every entity has plenty of history before the test
/// window: `dense_ticks` ticks of random training facts, then test facts.
pub fn dense_kg(seed: u64, entities: u32, test_facts: usize) -> (TemporalKg, Vocabulary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = 4;
    let mut seen = BTreeSet::new();
    let mut facts = Vec::new();
    for t in 0..5 {
        for s in 0..entities {
            let q = Quadruple::new(s, rng.random_range(0..relations), (s + 1 + rng.random_range(0..entities - 1)) % entities, t);
            if seen.insert(q) {
                facts.push(Fact { quad: q, split: Split::Train });
            }
        }
    }
    let mut n = 0;
    while n < test_facts {
        let s = rng.random_range(0..entities);
        let o = (s + 1 + rng.random_range(0..entities - 1)) % entities;
        let q = Quadruple::new(s, rng.random_range(0..relations), o, 5 + rng.random_range(0..20));
        if seen.insert(q) {
            facts.push(Fact { quad: q, split: Split::Test });
            n += 1;
        }
    }
    let kg = TemporalKg::from_facts(facts, relations).unwrap();
    augment_reversed(kg, vocab(entities as usize, relations as usize)).unwrap()
}

/// Store indices of facts with `subject` strictly before `before`, newest
/// first, ties by index, at most `limit`. A plain scan over every fact.
pub fn brute_candidates(kg: &TemporalKg, subject: u32, before: u32, limit: usize) -> Vec<usize> {
    let mut hits: Vec<(u32, usize)> = kg
        .facts()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.quad.subject == subject && f.quad.time < before)
        .map(|(i, f)| (f.quad.time, i))
        .collect();
    hits.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    hits.into_iter().take(limit).map(|(_, i)| i).collect()
}

pub fn brute_extend(kg: &TemporalKg, chains: &[HistoryChain], cap: usize) -> Vec<HistoryChain> {
    let mut out = Vec::new();
    for c in chains {
        if c.stalled {
            out.push(c.clone());
            continue;
        }
        let tail = kg.fact(*c.links.last().unwrap()).quad;
        let next = brute_candidates(kg, tail.object, tail.time, cap);
        if next.is_empty() {
            out.push(HistoryChain { links: c.links.clone(), stalled: true });
        }
        for i in next {
            let mut links = c.links.clone();
            links.push(i);
            out.push(HistoryChain { links, stalled: false });
        }
    }
    out
}

/// Rooted at the query subject, strictly decreasing times, each link
/// starting at the previous object.
pub fn strictly_monotone(kg: &TemporalKg, chain: &HistoryChain, query: &Query) -> bool {
    let quads: Vec<Quadruple> = chain.links.iter().map(|&i| kg.fact(i).quad).collect();
    if quads.is_empty() || quads[0].subject != query.subject || quads[0].time >= query.time {
        return false;
    }
    quads
        .windows(2)
        .all(|w| w[1].subject == w[0].object && w[1].time < w[0].time)
}

/// Entity ids sorted by score descending, then id ascending.
pub fn argsort(scores: &[f64]) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..scores.len() as u32).collect();
    ids.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    ids
}
