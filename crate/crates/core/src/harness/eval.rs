use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextResponsePair, Vocab, PAD};
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, distinct_n, macro_f1, mae_score, perplexity, MetricsReport};
use crate::model::{generate, teacher_forcing, DecodeMode, Example, ExemplarModel};
use crate::signals::{combined_digest, label_responses, Attribute, LabelSet, ResponseLabeler, SentimentLexicon};
use crate::tensor::Tape;

/// One line of a generation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub pair_id: String,
    pub tokens: Vec<String>,
}

pub fn save_generations(path: &Path, generations: &[Generation]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for g in generations {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_generations(path: &Path) -> Result<Vec<Generation>> {
    let io = |e| Error::io(path, e);
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Decodes a response for every example, in input order. Sampling seeds are
/// `seed + index`.
pub fn generate_responses(
    model: &ExemplarModel,
    examples: &[Example],
    vocab: &Vocab,
    mode: DecodeMode,
    seed: u64,
) -> Result<Vec<Generation>> {
    examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let memory = model.memory_tensor(&ex.context, &ex.exemplars)?;
            let ids = generate(&model.net, &model.store, &memory, mode, seed.wrapping_add(i as u64));
            Ok(Generation { pair_id: ex.pair_id.clone(), tokens: vocab.decode(&ids) })
        })
        .collect()
}

/// Token-weighted mean teacher-forced NLL of the gold responses.
pub fn mean_token_nll(model: &ExemplarModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Contract("no examples to score".into()));
    }
    let per: Vec<(f64, usize)> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new();
            let f = model.forward(&mut tape, ex)?;
            let count = teacher_forcing(&ex.gold).1.iter().filter(|&&t| t != PAD).count();
            Ok((tape.value(f.l_gen).item() * count as f64, count))
        })
        .collect::<Result<_>>()?;
    let (sum, count) = per.iter().fold((0.0, 0), |(s, c), &(l, n)| (s + l, c + n));
    Ok(sum / count as f64)
}

/// BLEU and Distinct-1/2 of candidates against references; Distinct is
/// left empty when every candidate is empty.
pub fn score_text(report: &mut MetricsReport, candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<()> {
    report.bleu = Some(corpus_bleu(candidates, references)?);
    report.distinct1 = distinct_n(candidates, 1).ok();
    report.distinct2 = distinct_n(candidates, 2).ok();
    Ok(())
}

/// Greedy generations scored against the gold responses, plus perplexity
/// of the gold responses under teacher forcing.
pub fn evaluate_automatic(
    model: &ExemplarModel,
    examples: &[Example],
    vocab: &Vocab,
    system: &str,
) -> Result<(MetricsReport, Vec<Generation>)> {
    let generations = generate_responses(model, examples, vocab, DecodeMode::Greedy, 0)?;
    let candidates: Vec<Vec<String>> = generations.iter().map(|g| g.tokens.clone()).collect();
    let references: Vec<Vec<String>> = examples.iter().map(|e| vocab.decode(&e.gold)).collect();
    let mut report = MetricsReport::new(system);
    score_text(&mut report, &candidates, &references)?;
    report.ppl = Some(perplexity(mean_token_nll(model, examples)?)?);
    Ok((report, generations))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScores {
    pub f1_ep: f64,
    pub f1_int: f64,
    pub f1_exp: f64,
    pub sent_mae: f64,
}

impl SyntheticScores {
    pub fn apply(&self, report: &mut MetricsReport) {
        report.f1_ep = Some(self.f1_ep);
        report.f1_int = Some(self.f1_int);
        report.f1_exp = Some(self.f1_exp);
        report.sent_mae = Some(self.sent_mae);
    }
}

/// Context tokens keyed by pair id.
pub fn contexts_by_pair(pairs: &[ContextResponsePair]) -> BTreeMap<String, Vec<String>> {
    pairs.iter().map(|p| (p.pair_id.clone(), p.context_tokens().cloned().collect())).collect()
}

/// Labels each generation with the labeler that produced `gold` and compares
/// with macro-F1 per attribute and sentiment MAE.
pub fn evaluate_synthetic(
    generations: &[Generation],
    contexts: &BTreeMap<String, Vec<String>>,
    gold: &LabelSet,
    labeler: &dyn ResponseLabeler,
    lexicon: &SentimentLexicon,
) -> Result<SyntheticScores> {
    let digest = combined_digest(labeler, lexicon);
    if digest != gold.labeler_digest {
        return Err(Error::LabelerMismatch { expected: gold.labeler_digest.clone(), found: digest });
    }
    if generations.is_empty() {
        return Err(Error::Contract("no generations to evaluate".into()));
    }
    let mut sorted: Vec<&Generation> = generations.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
        return Err(Error::Contract(format!("pair `{}` generated twice", w[0].pair_id)));
    }
    let by_pair = gold.by_pair();
    let mut items = Vec::with_capacity(sorted.len());
    let mut gold_labels = Vec::with_capacity(sorted.len());
    for g in &sorted {
        let labels = by_pair
            .get(g.pair_id.as_str())
            .ok_or_else(|| Error::Contract(format!("no gold labels for pair `{}`", g.pair_id)))?;
        let ctx = contexts
            .get(&g.pair_id)
            .ok_or_else(|| Error::Contract(format!("no context for pair `{}`", g.pair_id)))?;
        items.push((ctx.clone(), g.tokens.clone()));
        gold_labels.push(**labels);
    }
    let predicted = label_responses(&items, labeler, lexicon);
    let classes: BTreeSet<u8> = [0, 1, 2].into();
    let f1 = |a: Attribute| {
        let g: Vec<u8> = gold_labels.iter().map(|l| l.discrete().get(a)).collect();
        let p: Vec<u8> = predicted.iter().map(|l| l.discrete().get(a)).collect();
        macro_f1(&g, &p, &classes)
    };
    let gs: Vec<f64> = gold_labels.iter().map(|l| l.sentiment).collect();
    let ps: Vec<f64> = predicted.iter().map(|l| l.sentiment).collect();
    Ok(SyntheticScores {
        f1_ep: f1(Attribute::EmotionalPresence)?,
        f1_int: f1(Attribute::Interpretation)?,
        f1_exp: f1(Attribute::Exploration)?,
        sent_mae: mae_score(&gs, &ps)?,
    })
}
