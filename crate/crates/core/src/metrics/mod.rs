//! Automatic evaluation measures: BLEU, perplexity, Distinct-n, F1 scores,
//! accuracy and mean absolute error.

mod report;

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};

pub use report::{align, render_table, round2, AbOutcome, LabelerScore, MetricsReport, RatingMeans};

/// Zero clipped counts are replaced by this before taking logs.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const BLEU_MAX_ORDER: usize = 4;

fn ngrams<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(|t| t.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    counts
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{what}: {a} vs {b} items")));
    }
    Ok(())
}

/// Corpus-level BLEU ×100 with clipped n-gram precisions up to 4-grams,
/// `ε` in place of zero match counts and the standard brevity penalty.
/// Orders for which the candidates contain no n-gram at all are left out of
/// the geometric mean.
pub fn corpus_bleu<T: AsRef<str>>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    check_lengths(candidates.len(), references.len(), "corpus_bleu")?;
    if references.is_empty() {
        return Err(Error::Contract("corpus_bleu needs at least one reference".into()));
    }
    let mut matches = [0usize; BLEU_MAX_ORDER];
    let mut totals = [0usize; BLEU_MAX_ORDER];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refr) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += refr.len();
        for n in 1..=BLEU_MAX_ORDER {
            let rc = ngrams(refr, n);
            for (g, c) in ngrams(cand, n) {
                totals[n - 1] += c;
                matches[n - 1] += c.min(rc.get(&g).copied().unwrap_or(0));
            }
        }
    }
    if c_len == 0 {
        return Ok(0.0);
    }
    let logs: Vec<f64> = (0..BLEU_MAX_ORDER)
        .filter(|&i| totals[i] > 0)
        .map(|i| {
            let m = if matches[i] == 0 { BLEU_EPSILON } else { matches[i] as f64 };
            (m / totals[i] as f64).ln()
        })
        .collect();
    let log_p = logs.iter().sum::<f64>() / logs.len() as f64;
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    Ok(100.0 * bp * log_p.exp())
}

pub fn perplexity(mean_token_nll: f64) -> Result<f64> {
    if !(mean_token_nll >= 0.0) {
        return Err(Error::Contract(format!("negative or NaN NLL {mean_token_nll}")));
    }
    Ok(mean_token_nll.exp())
}

/// Denominator of Distinct-n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistinctDenominator {
    /// Total token count, for every n.
    #[default]
    Tokens,
    /// Total count of n-grams.
    Ngrams,
}

/// Unique n-grams over the pooled responses as a percentage of the total
/// token count. N-grams never cross response boundaries.
pub fn distinct_n<T: AsRef<str>>(responses: &[Vec<T>], n: usize) -> Result<f64> {
    distinct_n_with(responses, n, DistinctDenominator::Tokens)
}

pub fn distinct_n_with<T: AsRef<str>>(responses: &[Vec<T>], n: usize, denom: DistinctDenominator) -> Result<f64> {
    if n == 0 {
        return Err(Error::Contract("distinct-n needs n ≥ 1".into()));
    }
    let tokens: usize = responses.iter().map(Vec::len).sum();
    if tokens == 0 {
        return Err(Error::Contract("distinct-n over an empty response set".into()));
    }
    let mut unique = HashSet::new();
    let mut grams = 0;
    for r in responses {
        if r.len() >= n {
            for w in r.windows(n) {
                unique.insert(w.iter().map(|t| t.as_ref()).collect::<Vec<_>>());
                grams += 1;
            }
        }
    }
    let d = match denom {
        DistinctDenominator::Tokens => tokens,
        DistinctDenominator::Ngrams if grams == 0 => return Ok(0.0),
        DistinctDenominator::Ngrams => grams,
    };
    Ok(100.0 * unique.len() as f64 / d as f64)
}

struct ClassCounts {
    tp: usize,
    fp: usize,
    fn_: usize,
    support: usize,
}

fn per_class<L: Ord + Copy>(gold: &[L], pred: &[L], classes: &BTreeSet<L>) -> Vec<(L, ClassCounts)> {
    classes
        .iter()
        .map(|&c| {
            let mut k = ClassCounts { tp: 0, fp: 0, fn_: 0, support: 0 };
            for (&g, &p) in gold.iter().zip(pred) {
                match (g == c, p == c) {
                    (true, true) => k.tp += 1,
                    (false, true) => k.fp += 1,
                    (true, false) => k.fn_ += 1,
                    _ => {}
                }
                k.support += usize::from(g == c);
            }
            (c, k)
        })
        .collect()
}

fn f1(k: &ClassCounts) -> f64 {
    let denom = 2 * k.tp + k.fp + k.fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * k.tp as f64 / denom as f64
    }
}

/// Unweighted mean of per-class F1 ×100 over the declared classes that occur
/// in `gold` or `pred`. A class that is predicted but never correct, or
/// present but never predicted, contributes 0.
pub fn macro_f1<L: Ord + Copy>(gold: &[L], pred: &[L], classes: &BTreeSet<L>) -> Result<f64> {
    check_lengths(gold.len(), pred.len(), "macro_f1")?;
    let scores: Vec<f64> = per_class(gold, pred, classes)
        .into_iter()
        .filter(|(_, k)| k.tp + k.fp + k.fn_ > 0)
        .map(|(_, k)| f1(&k))
        .collect();
    if scores.is_empty() {
        return Ok(if gold.is_empty() { 100.0 } else { 0.0 });
    }
    Ok(100.0 * scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Accuracy ×100 and support-weighted mean of per-class F1 ×100.
pub fn weighted_f1_and_accuracy<L: Ord + Copy>(gold: &[L], pred: &[L], classes: &BTreeSet<L>) -> Result<(f64, f64)> {
    check_lengths(gold.len(), pred.len(), "weighted_f1")?;
    if gold.is_empty() {
        return Err(Error::Contract("weighted_f1 over no items".into()));
    }
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    let acc = 100.0 * correct as f64 / gold.len() as f64;
    let counts = per_class(gold, pred, classes);
    let support: usize = counts.iter().map(|(_, k)| k.support).sum();
    let wf1 = if support == 0 {
        0.0
    } else {
        100.0 * counts.iter().map(|(_, k)| k.support as f64 * f1(k)).sum::<f64>() / support as f64
    };
    Ok((acc, wf1))
}

pub fn mae_score(gold: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(gold.len(), pred.len(), "mae_score")?;
    if gold.is_empty() {
        return Err(Error::Contract("mae over no items".into()));
    }
    Ok(gold.iter().zip(pred).map(|(g, p)| (g - p).abs()).sum::<f64>() / gold.len() as f64)
}
