//! Synthetic empathy supervision: rule-based three-level labels for
//! emotional presence, interpretation and exploration, a lexicon sentiment
//! score, and a trainable classifier stand-in.

mod labeler;
mod lexicon;
mod rules;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ContextResponsePair;
use crate::error::{Error, Result};

pub use labeler::{train_stand_in_labeler, LabeledTriplet, LabelerReport, LabelerTraining, ModelLabeler, StandInLabeler};
pub use lexicon::{sentiment_score, SentimentLexicon};
pub use rules::{rule_label, RuleLabeler, RuleTables};

/// The three discrete empathy attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    EmotionalPresence,
    Interpretation,
    Exploration,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::EmotionalPresence, Attribute::Interpretation, Attribute::Exploration];

    pub fn short(self) -> &'static str {
        match self {
            Attribute::EmotionalPresence => "ep",
            Attribute::Interpretation => "int",
            Attribute::Exploration => "exp",
        }
    }
}

/// Discrete levels 0 (low) to 2 (high) for each attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DiscreteLabels {
    pub ep: u8,
    pub int: u8,
    pub exp: u8,
}

impl DiscreteLabels {
    pub fn get(&self, a: Attribute) -> u8 {
        match a {
            Attribute::EmotionalPresence => self.ep,
            Attribute::Interpretation => self.int,
            Attribute::Exploration => self.exp,
        }
    }

    pub fn set(&mut self, a: Attribute, v: u8) {
        match a {
            Attribute::EmotionalPresence => self.ep = v,
            Attribute::Interpretation => self.int = v,
            Attribute::Exploration => self.exp = v,
        }
    }
}

/// Three-level attributes plus a sentiment score in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpathyLabels {
    pub ep: u8,
    pub int: u8,
    pub exp: u8,
    pub sentiment: f64,
}

impl EmpathyLabels {
    pub fn new(d: DiscreteLabels, sentiment: f64) -> Result<Self> {
        for a in Attribute::ALL {
            if d.get(a) > 2 {
                return Err(Error::Contract(format!("{} level {} outside 0..=2", a.short(), d.get(a))));
            }
        }
        if !(-1.0..=1.0).contains(&sentiment) {
            return Err(Error::Contract(format!("sentiment {sentiment} outside [-1, 1]")));
        }
        Ok(Self { ep: d.ep, int: d.int, exp: d.exp, sentiment })
    }

    pub fn discrete(&self) -> DiscreteLabels {
        DiscreteLabels { ep: self.ep, int: self.int, exp: self.exp }
    }
}

/// Anything that assigns discrete levels to a response given its context.
pub trait ResponseLabeler: Sync {
    fn label(&self, context: &[String], response: &[String]) -> DiscreteLabels;
    /// Identifies the labeler and all data it depends on.
    fn digest(&self) -> String;
}

/// One line of a label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub pair_id: String,
    #[serde(flatten)]
    pub labels: EmpathyLabels,
}

/// Per-attribute level counts and sentiment range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub total: usize,
    pub ep: [usize; 3],
    pub int: [usize; 3],
    pub exp: [usize; 3],
    pub sentiment_mean: f64,
    pub sentiment_min: f64,
    pub sentiment_max: f64,
}

/// Labels for a corpus together with the digest of the labeler (and
/// lexicon) that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub labeler_digest: String,
    pub records: Vec<LabelRecord>,
}

impl LabelSet {
    pub fn by_pair(&self) -> BTreeMap<&str, &EmpathyLabels> {
        self.records.iter().map(|r| (r.pair_id.as_str(), &r.labels)).collect()
    }

    pub fn distribution(&self) -> LabelDistribution {
        let mut d = LabelDistribution {
            total: self.records.len(),
            ep: [0; 3],
            int: [0; 3],
            exp: [0; 3],
            sentiment_mean: 0.0,
            sentiment_min: 0.0,
            sentiment_max: 0.0,
        };
        if self.records.is_empty() {
            return d;
        }
        d.sentiment_min = f64::INFINITY;
        d.sentiment_max = f64::NEG_INFINITY;
        for r in &self.records {
            let l = &r.labels;
            d.ep[l.ep as usize] += 1;
            d.int[l.int as usize] += 1;
            d.exp[l.exp as usize] += 1;
            d.sentiment_mean += l.sentiment;
            d.sentiment_min = d.sentiment_min.min(l.sentiment);
            d.sentiment_max = d.sentiment_max.max(l.sentiment);
        }
        d.sentiment_mean /= self.records.len() as f64;
        d
    }

    /// Writes the JSONL label file and, next to it, `<path>.meta.json` with
    /// the labeler digest and the label distribution.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)?;
        let meta = meta_path(path);
        let body = serde_json::json!({ "labeler_digest": self.labeler_digest, "distribution": self.distribution() });
        std::fs::write(&meta, serde_json::to_string_pretty(&body)?).map_err(|e| Error::io(&meta, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let r: LabelRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            EmpathyLabels::new(r.labels.discrete(), r.labels.sentiment).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            records.push(r);
        }
        let meta = meta_path(path);
        let body: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?)?;
        let labeler_digest = body["labeler_digest"]
            .as_str()
            .ok_or_else(|| Error::Parse { path: meta.display().to_string(), line: 1, msg: "missing labeler_digest".into() })?
            .to_string();
        Ok(Self { labeler_digest, records })
    }
}

pub fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    s.into()
}

/// Digest of a labeler combined with the sentiment lexicon.
pub fn combined_digest(labeler: &dyn ResponseLabeler, lexicon: &SentimentLexicon) -> String {
    crate::util::hex(&crate::util::sha256(format!("{}:{}", labeler.digest(), lexicon.digest()).as_bytes()))
}

/// Labels every gold response of `pairs`.
pub fn synthesize_corpus_labels(
    pairs: &[ContextResponsePair],
    labeler: &dyn ResponseLabeler,
    lexicon: &SentimentLexicon,
) -> Result<LabelSet> {
    use rayon::prelude::*;
    let records = pairs
        .par_iter()
        .map(|p| {
            let context: Vec<String> = p.context_tokens().cloned().collect();
            let d = labeler.label(&context, &p.response.tokens);
            let labels = EmpathyLabels::new(d, sentiment_score(&p.response.tokens, lexicon))?;
            Ok(LabelRecord { pair_id: p.pair_id.clone(), labels })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelSet { labeler_digest: combined_digest(labeler, lexicon), records })
}

/// Labels arbitrary token sequences (e.g. generations) with their contexts.
pub fn label_responses(
    items: &[(Vec<String>, Vec<String>)],
    labeler: &dyn ResponseLabeler,
    lexicon: &SentimentLexicon,
) -> Vec<EmpathyLabels> {
    items
        .iter()
        .map(|(ctx, resp)| {
            let d = labeler.label(ctx, resp);
            EmpathyLabels { ep: d.ep, int: d.int, exp: d.exp, sentiment: sentiment_score(resp, lexicon) }
        })
        .collect()
}

pub(crate) fn token_set(tokens: &[String]) -> HashSet<&str> {
    tokens.iter().map(String::as_str).collect()
}
