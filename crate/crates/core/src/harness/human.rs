use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{align, round2, AbOutcome, RatingMeans};

/// One annotator's judgement of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub sample_id: String,
    pub annotator_id: String,
    pub empathy: i64,
    pub relevance: i64,
    pub fluency: i64,
    pub ep: i64,
    pub int: i64,
    pub exp: i64,
}

impl RatingRecord {
    pub fn validate(&self) -> Result<()> {
        let record = || format!("{}/{}", self.sample_id, self.annotator_id);
        let coarse = [("empathy", self.empathy), ("relevance", self.relevance), ("fluency", self.fluency)];
        for (field, value) in coarse {
            if !(1..=5).contains(&value) {
                return Err(Error::OutOfRange { record: record(), field, value });
            }
        }
        for (field, value) in [("ep", self.ep), ("int", self.int), ("exp", self.exp)] {
            if !(0..=2).contains(&value) {
                return Err(Error::OutOfRange { record: record(), field, value });
            }
        }
        Ok(())
    }
}

/// Reads `sample_id,annotator_id,empathy,relevance,fluency,ep,int,exp` with a
/// header row, rejecting out-of-range scores.
pub fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let r: RatingRecord = row?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

/// Means per attribute over every (sample, annotator) record.
pub fn aggregate_ratings(records: &[RatingRecord]) -> Result<RatingMeans> {
    if records.is_empty() {
        return Err(Error::Contract("no rating records".into()));
    }
    for r in records {
        r.validate()?;
    }
    let n = records.len() as f64;
    let mean = |f: fn(&RatingRecord) -> i64| records.iter().map(|r| f(r) as f64).sum::<f64>() / n;
    Ok(RatingMeans {
        empathy: mean(|r| r.empathy),
        relevance: mean(|r| r.relevance),
        fluency: mean(|r| r.fluency),
        ep: mean(|r| r.ep),
        int: mean(|r| r.int),
        exp: mean(|r| r.exp),
        samples: records.iter().map(|r| &r.sample_id).collect::<BTreeSet<_>>().len(),
        annotators: records.iter().map(|r| &r.annotator_id).collect::<BTreeSet<_>>().len(),
    })
}

/// A preference between system A and system B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Vote {
    A,
    B,
    Tie,
}

impl FromStr for Vote {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Vote::A),
            "B" => Ok(Vote::B),
            "TIE" => Ok(Vote::Tie),
            other => Err(format!("unknown vote `{other}` (expected A, B or TIE)")),
        }
    }
}

/// Three annotator votes, plus a fourth when the three all differ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbVote {
    pub sample_id: String,
    pub votes: [Vote; 3],
    pub tiebreak: Option<Vote>,
}

impl AbVote {
    pub fn new(sample_id: impl Into<String>, votes: [Vote; 3], tiebreak: Option<Vote>) -> Result<Self> {
        let v = Self { sample_id: sample_id.into(), votes, tiebreak };
        v.validate()?;
        Ok(v)
    }

    fn all_distinct(&self) -> bool {
        let [a, b, c] = self.votes;
        a != b && b != c && a != c
    }

    pub fn validate(&self) -> Result<()> {
        match (self.all_distinct(), self.tiebreak) {
            (true, None) => Err(Error::MissingTiebreak(self.sample_id.clone())),
            (false, Some(_)) => {
                Err(Error::InvalidVote(self.sample_id.clone(), "tiebreak given although the three votes have a majority".into()))
            }
            _ => Ok(()),
        }
    }

    /// Majority of the three votes, or the tiebreak when they all differ.
    pub fn outcome(&self) -> Result<Vote> {
        self.validate()?;
        let [a, b, c] = self.votes;
        Ok(if a == b || a == c {
            a
        } else if b == c {
            b
        } else {
            self.tiebreak.expect("validated")
        })
    }
}

/// Reads `sample_id,v1,v2,v3[,v4]` rows. A first row starting with
/// `sample_id` is taken as a header.
pub fn load_votes(path: &Path) -> Result<Vec<AbVote>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        if i == 0 && row.get(0) == Some("sample_id") {
            continue;
        }
        let sample = row.get(0).unwrap_or("").to_string();
        if sample.is_empty() {
            continue;
        }
        if !(4..=5).contains(&row.len()) {
            return Err(Error::InvalidVote(sample, format!("expected 3 or 4 votes, found {}", row.len() - 1)));
        }
        let parse = |s: &str| s.parse::<Vote>().map_err(|e| Error::InvalidVote(sample.clone(), e));
        let votes = [parse(&row[1])?, parse(&row[2])?, parse(&row[3])?];
        let tiebreak = match row.get(4) {
            Some(s) if !s.is_empty() => Some(parse(s)?),
            _ => None,
        };
        out.push(AbVote::new(sample, votes, tiebreak)?);
    }
    Ok(out)
}

/// Percentages of samples won by A, won by B and tied.
pub fn ab_aggregate(votes: &[AbVote]) -> Result<AbOutcome> {
    if votes.is_empty() {
        return Err(Error::Contract("no A/B votes".into()));
    }
    let (mut win, mut loss, mut tie) = (0usize, 0usize, 0usize);
    for v in votes {
        match v.outcome()? {
            Vote::A => win += 1,
            Vote::B => loss += 1,
            Vote::Tie => tie += 1,
        }
    }
    let pct = |k: usize| 100.0 * k as f64 / votes.len() as f64;
    Ok(AbOutcome { win: pct(win), loss: pct(loss), tie: pct(tie) })
}

pub fn render_ratings_table(rows: &[(String, RatingMeans)]) -> String {
    let mut table = vec![["System", "Empathy", "Relevance", "Fluency", "EP", "Int", "Exp"].map(String::from).to_vec()];
    for (name, m) in rows {
        let mut row = vec![name.clone()];
        row.extend([m.empathy, m.relevance, m.fluency, m.ep, m.int, m.exp].map(|x| format!("{:.2}", round2(x))));
        table.push(row);
    }
    align(&table)
}

pub fn render_ab_table(rows: &[(String, AbOutcome)]) -> String {
    let mut table = vec![["Comparison", "Win", "Loss", "Tie"].map(String::from).to_vec()];
    for (name, o) in rows {
        let mut row = vec![name.clone()];
        row.extend([o.win, o.loss, o.tie].map(|x| format!("{:.2}", round2(x))));
        table.push(row);
    }
    align(&table)
}
