use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{token_set, DiscreteLabels, ResponseLabeler};
use crate::corpus::tokenize;
use crate::error::{Error, Result};

const DEFAULT_RULES: &str = include_str!("../../data/rules.json");

/// Word lists and marker phrases driving the rule labeler. Phrases are
/// tokenized with the corpus tokenizer before matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTables {
    pub version: u32,
    pub negations: Vec<String>,
    pub intensifiers: BTreeMap<String, f64>,
    pub stopwords: Vec<String>,
    pub emotion_words: Vec<String>,
    pub addressee_patterns: Vec<String>,
    pub experience_markers: Vec<String>,
    pub understanding_markers: Vec<String>,
    pub sentence_breaks: Vec<String>,
}

impl Default for RuleTables {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_RULES).expect("builtin rule tables parse")
    }
}

impl RuleTables {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn digest(&self) -> String {
        crate::util::hex(&crate::util::sha256(&serde_json::to_vec(self).expect("tables serialize")))
    }
}

/// Tables compiled into token-level lookups.
#[derive(Debug, Clone)]
pub struct RuleLabeler {
    tables: RuleTables,
    stopwords: HashSet<String>,
    emotion_words: HashSet<String>,
    breaks: HashSet<String>,
    addressee: Vec<Vec<String>>,
    experience: Vec<Vec<String>>,
    understanding: Vec<Vec<String>>,
}

impl Default for RuleLabeler {
    fn default() -> Self {
        Self::new(RuleTables::default())
    }
}

fn phrases(list: &[String]) -> Vec<Vec<String>> {
    list.iter().map(|p| tokenize(p)).filter(|p| !p.is_empty()).collect()
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    tokens.windows(phrase.len()).any(|w| w == phrase)
}

impl RuleLabeler {
    pub fn new(tables: RuleTables) -> Self {
        Self {
            stopwords: tables.stopwords.iter().cloned().collect(),
            emotion_words: tables.emotion_words.iter().cloned().collect(),
            breaks: tables.sentence_breaks.iter().cloned().collect(),
            addressee: phrases(&tables.addressee_patterns),
            experience: phrases(&tables.experience_markers),
            understanding: phrases(&tables.understanding_markers),
            tables,
        }
    }

    pub fn tables(&self) -> &RuleTables {
        &self.tables
    }

    fn exploration(&self, response: &[String], context: &HashSet<&str>) -> u8 {
        let mut level = 0;
        let mut start = 0;
        for (i, t) in response.iter().enumerate() {
            if t == "?" {
                level = level.max(1);
                let clause = &response[start..i];
                if clause.iter().any(|w| !self.stopwords.contains(w) && context.contains(w.as_str())) {
                    return 2;
                }
            }
            if self.breaks.contains(t) {
                start = i + 1;
            }
        }
        level
    }

    fn emotional_presence(&self, response: &[String]) -> u8 {
        if !response.iter().any(|t| self.emotion_words.contains(t)) {
            0
        } else if self.addressee.iter().any(|p| contains_phrase(response, p)) {
            2
        } else {
            1
        }
    }

    fn interpretation(&self, response: &[String]) -> u8 {
        if self.experience.iter().any(|p| contains_phrase(response, p)) {
            2
        } else if self.understanding.iter().any(|p| contains_phrase(response, p)) {
            1
        } else {
            0
        }
    }
}

/// Deterministic levels for a response given the tokens of its context.
pub fn rule_label(response: &[String], context: &[String], labeler: &RuleLabeler) -> DiscreteLabels {
    let ctx = token_set(context);
    DiscreteLabels {
        ep: labeler.emotional_presence(response),
        int: labeler.interpretation(response),
        exp: labeler.exploration(response, &ctx),
    }
}

impl ResponseLabeler for RuleLabeler {
    fn label(&self, context: &[String], response: &[String]) -> DiscreteLabels {
        rule_label(response, context, self)
    }

    fn digest(&self) -> String {
        format!("rule:{}", self.tables.digest())
    }
}
