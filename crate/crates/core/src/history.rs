//! First-order history retrieval and chain extension.
//!
//! Candidates are always ordered newest first; facts sharing a timestamp
//! keep store order. Chain links are store indices into the [`TemporalKg`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, Query, Split, TemporalKg, Tick};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("chains to extend have mixed orders ({0} and {1})")]
    MixedOrder(usize, usize),
}

/// Which splits may serve as history. Facts must also precede the query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryScope {
    #[default]
    AllSplits,
    TrainValid,
    TrainOnly,
}

impl HistoryScope {
    fn admits(self, split: Split) -> bool {
        match self {
            HistoryScope::AllSplits => true,
            HistoryScope::TrainValid => split != Split::Test,
            HistoryScope::TrainOnly => split == Split::Train,
        }
    }
}

/// A first-order history as presented in one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRef {
    pub quad_index: usize,
    pub local_id: usize,
}

/// Store indices of linked facts, rooted at the query subject. `stalled`
/// marks a chain that could not be extended and was carried forward as is.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryChain {
    pub links: Vec<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stalled: bool,
}

impl HistoryChain {
    pub fn single(quad_index: usize) -> Self {
        Self {
            links: vec![quad_index],
            stalled: false,
        }
    }

    pub fn order(&self) -> usize {
        self.links.len()
    }

    pub fn tail(&self) -> usize {
        *self.links.last().expect("chains are never empty")
    }

    /// `t_query > links[0].time > links[1].time > ...`, rooted at the query
    /// subject, each link starting where the previous one ended.
    pub fn is_valid_for(&self, kg: &TemporalKg, query: &Query) -> bool {
        let Some(&first) = self.links.first() else {
            return false;
        };
        let first = kg.fact(first).quad;
        if first.subject != query.subject || first.time >= query.time {
            return false;
        }
        self.links.windows(2).all(|w| {
            let (prev, next) = (kg.fact(w[0]).quad, kg.fact(w[1]).quad);
            next.subject == prev.object && next.time < prev.time
        })
    }
}

/// Per-subject posting lists over a store.
#[derive(Debug)]
pub struct HistoryIndex<'a> {
    kg: &'a TemporalKg,
    by_subject: Vec<Vec<usize>>,
}

impl<'a> HistoryIndex<'a> {
    pub fn new(kg: &'a TemporalKg, scope: HistoryScope) -> Self {
        let n = kg
            .facts()
            .iter()
            .map(|f| f.quad.subject.max(f.quad.object) as usize + 1)
            .max()
            .unwrap_or(0);
        let mut by_subject = vec![Vec::new(); n];
        for (i, fact) in kg.facts().iter().enumerate() {
            if scope.admits(fact.split) {
                by_subject[fact.quad.subject as usize].push(i);
            }
        }
        Self { kg, by_subject }
    }

    pub fn kg(&self) -> &'a TemporalKg {
        self.kg
    }

    /// Facts with the given subject strictly before `before`, newest first,
    /// ties in store order, at most `limit` of them.
    pub fn candidates(&self, subject: EntityId, before: Tick, limit: usize) -> Vec<usize> {
        let Some(list) = self.by_subject.get(subject as usize) else {
            return Vec::new();
        };
        let kg = self.kg;
        let end = list.partition_point(|&i| kg.fact(i).quad.time < before);
        let mut out = Vec::with_capacity(limit.min(end));
        let mut hi = end;
        while hi > 0 && out.len() < limit {
            let t = kg.fact(list[hi - 1]).quad.time;
            let lo = list[..hi].partition_point(|&i| kg.fact(i).quad.time < t);
            for &i in &list[lo..hi] {
                if out.len() == limit {
                    break;
                }
                out.push(i);
            }
            hi = lo;
        }
        out
    }

    pub fn first_order_histories(&self, query: &Query, limit: usize) -> Vec<HistoryRef> {
        self.candidates(query.subject, query.time, limit)
            .into_iter()
            .enumerate()
            .map(|(local_id, quad_index)| HistoryRef {
                quad_index,
                local_id,
            })
            .collect()
    }

    /// Appends to each chain up to `per_chain_cap` facts leaving its tail
    /// object strictly before the tail time. Chains without any such fact
    /// are carried forward with `stalled` set; already stalled chains pass
    /// through unchanged and are exempt from the equal-order check.
    pub fn extend_chains(
        &self,
        chains: &[HistoryChain],
        per_chain_cap: usize,
    ) -> Result<Vec<HistoryChain>, HistoryError> {
        let mut order = None;
        for chain in chains.iter().filter(|c| !c.stalled) {
            match order {
                None => order = Some(chain.order()),
                Some(o) if o != chain.order() => {
                    return Err(HistoryError::MixedOrder(o, chain.order()))
                }
                _ => {}
            }
        }

        let mut out = Vec::new();
        for chain in chains {
            if chain.stalled {
                out.push(chain.clone());
                continue;
            }
            let tail = self.kg.fact(chain.tail()).quad;
            let next = self.candidates(tail.object, tail.time, per_chain_cap);
            if next.is_empty() {
                out.push(HistoryChain {
                    links: chain.links.clone(),
                    stalled: true,
                });
            }
            for idx in next {
                let mut links = chain.links.clone();
                links.push(idx);
                out.push(HistoryChain {
                    links,
                    stalled: false,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Direction, Fact, Quadruple};

    fn kg(quads: &[(u32, u32, u32, u32)]) -> TemporalKg {
        let facts = quads
            .iter()
            .map(|&(s, r, o, t)| Fact {
                quad: Quadruple::new(s, r, o, t),
                split: Split::Train,
            })
            .collect();
        TemporalKg::from_facts(facts, 10).unwrap()
    }

    fn query(subject: u32, time: u32) -> Query {
        Query {
            id: 0,
            subject,
            relation: 0,
            ground_truth: 0,
            time,
            direction: Direction::Forward,
            source: Quadruple::new(subject, 0, 0, time),
            cold_start: false,
        }
    }

    #[test]
    fn under_limit_returns_all_newest_first() {
        let kg = kg(&[(0, 1, 1, 1), (0, 1, 2, 3), (0, 2, 1, 2), (0, 1, 3, 5), (0, 1, 4, 4), (0, 1, 4, 9)]);
        let idx = HistoryIndex::new(&kg, HistoryScope::AllSplits);
        let refs = idx.first_order_histories(&query(0, 6), 100);
        let times: Vec<_> = refs.iter().map(|r| kg.fact(r.quad_index).quad.time).collect();
        assert_eq!(times, vec![5, 4, 3, 2, 1]);
        assert_eq!(refs.iter().map(|r| r.local_id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn truncates_to_most_recent() {
        let quads: Vec<_> = (0..240).map(|t| (7, 0, 1, t)).collect();
        let kg = kg(&quads);
        let idx = HistoryIndex::new(&kg, HistoryScope::AllSplits);
        let refs = idx.first_order_histories(&query(7, 240), 100);
        assert_eq!(refs.len(), 100);
        assert_eq!(kg.fact(refs[0].quad_index).quad.time, 239);
        assert_eq!(kg.fact(refs[99].quad_index).quad.time, 140);
    }

    #[test]
    fn same_tick_ties_keep_store_order() {
        let kg = kg(&[(0, 3, 1, 4), (0, 1, 2, 4), (0, 2, 9, 4)]);
        let idx = HistoryIndex::new(&kg, HistoryScope::AllSplits);
        let refs = idx.first_order_histories(&query(0, 5), 2);
        let rels: Vec<_> = refs.iter().map(|r| kg.fact(r.quad_index).quad.relation).collect();
        assert_eq!(rels, vec![1, 2]);
    }

    #[test]
    fn no_prior_facts_gives_empty() {
        let kg = kg(&[(0, 1, 1, 5)]);
        let idx = HistoryIndex::new(&kg, HistoryScope::AllSplits);
        assert!(idx.first_order_histories(&query(0, 5), 10).is_empty());
        assert!(idx.first_order_histories(&query(3, 50), 10).is_empty());
    }

    #[test]
    fn scope_hides_later_splits() {
        let facts = vec![
            Fact { quad: Quadruple::new(0, 0, 1, 1), split: Split::Train },
            Fact { quad: Quadruple::new(0, 0, 2, 2), split: Split::Valid },
        ];
        let kg = TemporalKg::from_facts(facts, 1).unwrap();
        assert_eq!(HistoryIndex::new(&kg, HistoryScope::AllSplits).candidates(0, 9, 9).len(), 2);
        assert_eq!(HistoryIndex::new(&kg, HistoryScope::TrainOnly).candidates(0, 9, 9).len(), 1);
    }

    #[test]
    fn extension_appends_strictly_earlier_fact() {
        // Germany(0) condemns Russia(1) at t2=5; Russia fights Ukraine(2) at t1=3.
        let kg = kg(&[(0, 0, 1, 5), (1, 1, 2, 3), (1, 1, 3, 5)]);
        let idx = HistoryIndex::new(&kg, HistoryScope::AllSplits);
        let first = idx.first_order_histories(&query(0, 6), 10);
        let chains = vec![HistoryChain::single(first[0].quad_index)];
        let out = idx.extend_chains(&chains, 3).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(kg.fact(out[0].links[1]).quad, Quadruple::new(1, 1, 2, 3));
        assert!(out[0].is_valid_for(&kg, &query(0, 6)));
    }

    #[test]
    fn dead_end_is_carried_forward_and_flagged() {
        let kg = kg(&[(0, 0, 1, 5)]);
        let idx = HistoryIndex::new(&kg, HistoryScope::AllSplits);
        let out = idx.extend_chains(&[HistoryChain::single(0)], 3).unwrap();
        assert_eq!(out, vec![HistoryChain { links: vec![0], stalled: true }]);
        // a stalled chain may sit next to longer ones
        let kg = kg_with_two();
        let idx = HistoryIndex::new(&kg, HistoryScope::AllSplits);
        let mixed = vec![
            HistoryChain { links: vec![0], stalled: true },
            HistoryChain { links: vec![1, 0], stalled: false },
        ];
        assert!(idx.extend_chains(&mixed, 3).is_ok());
    }

    fn kg_with_two() -> TemporalKg {
        kg(&[(1, 0, 2, 1), (0, 0, 1, 2)])
    }

    #[test]
    fn mixed_orders_rejected() {
        let kg = kg_with_two();
        let idx = HistoryIndex::new(&kg, HistoryScope::AllSplits);
        let chains = vec![HistoryChain::single(1), HistoryChain { links: vec![1, 0], stalled: false }];
        assert_eq!(idx.extend_chains(&chains, 3), Err(HistoryError::MixedOrder(1, 2)));
    }

    #[test]
    fn cap_keeps_newest_extensions() {
        let mut quads = vec![(0, 0, 1, 20)];
        quads.extend((0..7).map(|t| (1, 1, 2 + t, 10 + t)));
        let kg = kg(&quads);
        let idx = HistoryIndex::new(&kg, HistoryScope::AllSplits);
        let root = idx.candidates(0, 21, 1)[0];
        let out = idx.extend_chains(&[HistoryChain::single(root)], 3).unwrap();
        let times: Vec<_> = out.iter().map(|c| kg.fact(c.tail()).quad.time).collect();
        assert_eq!(times, vec![16, 15, 14]);
    }
}
