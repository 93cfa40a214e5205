use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dialogue;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const START: usize = 2;
pub const EOS: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<start>", "<eos>"];

/// Token ↔ id table with the special tokens at ids 0–3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Specials followed by corpus tokens, most frequent first (ties
    /// alphabetical), capped at `max_size` entries when given.
    pub fn build<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>, max_size: Option<usize>) -> Self {
        Self::from_sequences(dialogues.into_iter().flat_map(|d| d.utterances.iter().map(|u| &u.tokens[..])), max_size)
    }

    /// Like [`Vocab::build`] over arbitrary token sequences.
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a [String]>, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in seqs {
            for t in s {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(t, _)| !SPECIALS.contains(t)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let cap = max_size.unwrap_or(usize::MAX).saturating_sub(SPECIALS.len());
        tokens.extend(ranked.into_iter().take(cap).map(|(t, _)| t.to_string()));
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Self = serde_json::from_str(&text)?;
        if v.tokens.len() < 4 || v.tokens[..4] != SPECIALS {
            return Err(Error::Contract("vocabulary must start with the four special tokens".into()));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, EmotionManifest, ToyCorpusConfig};

    #[test]
    fn specials_first_and_unknowns_map_to_unk() {
        let ds = generate_toy_corpus(&ToyCorpusConfig { dialogues: 10, ..Default::default() }, &EmotionManifest::default())
            .unwrap();
        let v = Vocab::build(&ds, None);
        assert_eq!(&v.tokens()[..4], &SPECIALS);
        assert_eq!(v.id("<eos>"), EOS);
        assert_eq!(v.id("definitely-not-a-token"), UNK);
        let capped = Vocab::build(&ds, Some(10));
        assert_eq!(capped.len(), 10);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
