use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::encoder::{dpr_similarity, BiEncoder};
use super::pool::{CandidatePool, PoolSet};
use crate::corpus::{ContextResponsePair, Vocab};
use crate::error::Result;
use crate::model::ContextIds;

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub tokens: Vec<usize>,
    pub score: f64,
    pub source_dialogue_id: String,
}

/// Exemplars by non-increasing score; `shortfall` when fewer than `q`
/// candidates were eligible.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub exemplars: Vec<Exemplar>,
    pub shortfall: bool,
}

/// Higher score first, then lower pool index.
#[derive(Debug, Clone, Copy)]
struct Ranked {
    score: f64,
    index: usize,
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

/// Exact top-`q` entries of `pool` by inner product with `query`, skipping
/// entries from `exclude_dialogue`.
pub fn top_q(pool: &CandidatePool, query: &[f64], exclude_dialogue: &str, q: usize) -> Result<RetrievalResult> {
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(q + 1);
    let mut eligible = 0;
    for (index, e) in pool.entries.iter().enumerate() {
        if e.source_dialogue_id == exclude_dialogue {
            continue;
        }
        eligible += 1;
        let r = Ranked { score: dpr_similarity(query, &e.vector)?, index };
        if heap.len() < q {
            heap.push(Reverse(r));
        } else if q > 0 && heap.peek().is_some_and(|w| r > w.0) {
            heap.pop();
            heap.push(Reverse(r));
        }
    }
    let ranked = heap.into_sorted_vec();
    let exemplars = ranked
        .into_iter()
        .map(|Reverse(r)| {
            let e = &pool.entries[r.index];
            Exemplar { tokens: e.tokens.clone(), score: r.score, source_dialogue_id: e.source_dialogue_id.clone() }
        })
        .collect();
    Ok(RetrievalResult { exemplars, shortfall: eligible < q })
}

/// Encodes the pair's context with the query encoder and searches the pool
/// of its emotion.
pub fn retrieve_exemplars(
    pair: &ContextResponsePair,
    vocab: &Vocab,
    enc: &BiEncoder,
    pools: &PoolSet,
    q: usize,
) -> Result<RetrievalResult> {
    let pool = pools.get(pair.emotion.id)?;
    let query = enc.query_vector(&ContextIds::from_pair(pair, vocab))?;
    top_q(pool, &query, &pair.source_dialogue_id, q)
}

/// [`retrieve_exemplars`] over many pairs, in input order.
pub fn retrieve_for_pairs(
    pairs: &[ContextResponsePair],
    vocab: &Vocab,
    enc: &BiEncoder,
    pools: &PoolSet,
    q: usize,
) -> Result<Vec<RetrievalResult>> {
    pairs.par_iter().map(|p| retrieve_exemplars(p, vocab, enc, pools, q)).collect()
}
