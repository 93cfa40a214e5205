use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dialogue;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Disjoint train/valid/test dialogue-id sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn select<'a>(&self, split: Split, dialogues: &'a [Dialogue]) -> Vec<&'a Dialogue> {
        let ids: HashSet<&String> = self.ids(split).iter().collect();
        dialogues.iter().filter(|d| ids.contains(&d.dialogue_id)).collect()
    }
}

/// Seeded shuffle of dialogue ids, then an 80/10/10 cut.
pub fn split_corpus(dialogues: &[Dialogue], seed: u64) -> Result<SplitSpec> {
    let n = dialogues.len();
    if n < 10 {
        return Err(Error::Insufficient(format!("splitting needs at least 10 dialogues, got {n}")));
    }
    let mut ids: Vec<String> = dialogues.iter().map(|d| d.dialogue_id.clone()).collect();
    let distinct: HashSet<&String> = ids.iter().collect();
    if distinct.len() != n {
        return Err(Error::Contract("duplicate dialogue ids".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_valid = ((n as f64 * 0.1).round() as usize).max(1);
    let test = ids.split_off(n_train + n_valid);
    let valid = ids.split_off(n_train);
    Ok(SplitSpec { train: ids, valid, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, make_training_pairs, EmotionManifest, ToyCorpusConfig};

    fn corpus(n: usize) -> Vec<Dialogue> {
        generate_toy_corpus(&ToyCorpusConfig { dialogues: n, ..Default::default() }, &EmotionManifest::default())
            .unwrap()
    }

    #[test]
    fn ratios() {
        let s = split_corpus(&corpus(10), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        let s = split_corpus(&corpus(100), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
        assert!(split_corpus(&corpus(9), 1).is_err());
    }

    #[test]
    fn exact_partition_and_pairs_stay_together() {
        let ds = corpus(57);
        let s = split_corpus(&ds, 4).unwrap();
        let all: Vec<&String> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
        let set: HashSet<&String> = all.iter().copied().collect();
        assert_eq!(all.len(), ds.len());
        assert_eq!(set.len(), ds.len());
        for split in [Split::Train, Split::Valid, Split::Test] {
            let ids: HashSet<&String> = s.ids(split).iter().collect();
            for d in s.select(split, &ds) {
                for p in make_training_pairs(d) {
                    assert!(ids.contains(&p.source_dialogue_id));
                }
            }
        }
        assert_eq!(split_corpus(&ds, 4).unwrap(), s);
    }
}
