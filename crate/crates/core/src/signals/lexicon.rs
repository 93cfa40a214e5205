use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::rules::RuleTables;
use crate::error::{Error, Result};

const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.tsv");

/// Normalization constant of `t / √(t² + α)`.
pub const NORMALIZATION_ALPHA: f64 = 15.0;
/// A negation flips the sign of hits up to this many tokens later.
pub const NEGATION_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentLexicon {
    pub valence: HashMap<String, f64>,
    pub negations: HashSet<String>,
    pub intensifiers: HashMap<String, f64>,
}

impl Default for SentimentLexicon {
    fn default() -> Self {
        let tables = RuleTables::default();
        Self::parse(DEFAULT_LEXICON, Path::new("<builtin lexicon>"), &tables).expect("builtin lexicon parses")
    }
}

impl SentimentLexicon {
    /// Parses `token<TAB>valence` lines; `#` starts a comment line.
    pub fn parse(text: &str, path: &Path, tables: &RuleTables) -> Result<Self> {
        let mut valence = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { path: path.display().to_string(), line: i + 1, msg };
            let (tok, val) = line.split_once('\t').ok_or_else(|| err("expected token<TAB>valence".into()))?;
            let v: f64 = val.trim().parse().map_err(|_| err(format!("bad valence `{val}`")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite valence for `{tok}`")));
            }
            valence.insert(tok.to_lowercase(), v);
        }
        let lex = Self {
            valence,
            negations: tables.negations.iter().cloned().collect(),
            intensifiers: tables.intensifiers.clone().into_iter().collect(),
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn load(path: &Path, tables: &RuleTables) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, tables)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((t, v)) = self.valence.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite valence {v} for `{t}`")));
        }
        if let Some((t, m)) = self.intensifiers.iter().find(|(_, m)| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::Contract(format!("intensifier `{t}` has non-positive multiplier {m}")));
        }
        Ok(())
    }

    /// Same lexicon with every valence negated.
    pub fn negated(&self) -> Self {
        Self { valence: self.valence.iter().map(|(k, v)| (k.clone(), -v)).collect(), ..self.clone() }
    }

    pub fn digest(&self) -> String {
        let mut entries: Vec<String> = self.valence.iter().map(|(k, v)| format!("{k}\t{v:?}")).collect();
        entries.sort();
        let mut neg: Vec<&String> = self.negations.iter().collect();
        neg.sort();
        let mut ints: Vec<String> = self.intensifiers.iter().map(|(k, v)| format!("{k}\t{v:?}")).collect();
        ints.sort();
        let body = format!("{}\n--\n{neg:?}\n--\n{}", entries.join("\n"), ints.join("\n"));
        crate::util::hex(&crate::util::sha256(body.as_bytes()))
    }
}

/// Sum of token valences, where a negation flips hits within the next
/// three tokens and an intensifier scales the next hit, squashed by
/// `t / √(t² + 15)`. Unknown tokens contribute 0.
pub fn sentiment_score(tokens: &[String], lexicon: &SentimentLexicon) -> f64 {
    let mut total = 0.0;
    let mut last_negation: Option<usize> = None;
    let mut boost = 1.0;
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_str();
        if lexicon.negations.contains(t) {
            last_negation = Some(i);
            continue;
        }
        if let Some(m) = lexicon.intensifiers.get(t) {
            boost *= m;
            continue;
        }
        if let Some(&v) = lexicon.valence.get(t) {
            let negated = last_negation.is_some_and(|n| i - n <= NEGATION_WINDOW);
            total += if negated { -v } else { v } * boost;
            boost = 1.0;
        }
    }
    total / (total * total + NORMALIZATION_ALPHA).sqrt()
}
