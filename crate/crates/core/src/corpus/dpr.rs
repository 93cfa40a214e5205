use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ContextResponsePair, EmotionLabel, Utterance};
use crate::error::{Error, Result};

pub const DEFAULT_N_NEG: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct Negative {
    pub tokens: Vec<String>,
    pub emotion: EmotionLabel,
    pub source_dialogue_id: String,
}

/// A context with its gold response and `n_neg` cross-emotion negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DprSample {
    pub pair_id: String,
    pub context: Vec<Utterance>,
    pub emotion: EmotionLabel,
    pub source_dialogue_id: String,
    pub positive: Vec<String>,
    pub negatives: Vec<Negative>,
}

/// Draws negatives uniformly, without replacement, from the agent responses
/// of dialogues whose emotion differs from the context's.
pub fn build_dpr_samples(pairs: &[ContextResponsePair], n_neg: usize, seed: u64) -> Result<Vec<DprSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let eligible: Vec<usize> = pairs
            .iter()
            .enumerate()
            .filter(|(_, q)| q.emotion.id != p.emotion.id && q.source_dialogue_id != p.source_dialogue_id)
            .map(|(i, _)| i)
            .collect();
        if eligible.len() < n_neg {
            return Err(Error::Insufficient(format!(
                "pair {} has {} cross-emotion responses, needs {n_neg}",
                p.pair_id,
                eligible.len()
            )));
        }
        let mut pool = eligible;
        // partial Fisher-Yates
        for i in 0..n_neg {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let negatives = pool[..n_neg]
            .iter()
            .map(|&i| Negative {
                tokens: pairs[i].response.tokens.clone(),
                emotion: pairs[i].emotion.clone(),
                source_dialogue_id: pairs[i].source_dialogue_id.clone(),
            })
            .collect();
        out.push(DprSample {
            pair_id: p.pair_id.clone(),
            context: p.context.clone(),
            emotion: p.emotion.clone(),
            source_dialogue_id: p.source_dialogue_id.clone(),
            positive: p.response.tokens.clone(),
            negatives,
        });
    }
    Ok(out)
}
