use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextResponsePair, Vocab};
use crate::error::{Error, Result};
use crate::model::{ContextIds, Example, ExemplarModel};
use crate::retriever::RetrievalResult;
use crate::signals::{EmpathyLabels, LabelSet};
use crate::tensor::{batch_gradients_with, save_checkpoint, AdamConfig, AdamState, ParamStore, Tape, Var};

/// Loss weights and optimization schedule of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingObjective {
    pub alpha_gen: f64,
    pub alpha_ep: f64,
    pub alpha_int: f64,
    pub alpha_exp: f64,
    pub alpha_sent: f64,
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainingObjective {
    fn default() -> Self {
        Self {
            alpha_gen: 1.0,
            alpha_ep: 0.1,
            alpha_int: 0.1,
            alpha_exp: 0.1,
            alpha_sent: 0.1,
            epochs: 50,
            patience: 5,
            learning_rate: 1e-5,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainingObjective {
    /// Same schedule with every auxiliary weight set to zero.
    pub fn without_empathy_losses(&self) -> Self {
        Self { alpha_ep: 0.0, alpha_int: 0.0, alpha_exp: 0.0, alpha_sent: 0.0, ..self.clone() }
    }

    pub fn alphas(&self) -> [f64; 5] {
        [self.alpha_gen, self.alpha_ep, self.alpha_int, self.alpha_exp, self.alpha_sent]
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas().iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Contract(format!("loss weights must be finite and non-negative: {:?}", self.alphas())));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Contract(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

/// The five loss components and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub gen: f64,
    pub ep: f64,
    pub int: f64,
    pub exp: f64,
    pub sent: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn parts(&self) -> [f64; 5] {
        [self.gen, self.ep, self.int, self.exp, self.sent]
    }

    /// `Σ αᵢ·componentᵢ` recomputed from the stored parts.
    pub fn weighted_sum(&self, objective: &TrainingObjective) -> f64 {
        self.parts().iter().zip(objective.alphas()).map(|(c, a)| a * c).sum()
    }

    fn mean(items: &[LossComponents]) -> Self {
        let n = items.len() as f64;
        let mut m = Self::default();
        for c in items {
            m.gen += c.gen;
            m.ep += c.ep;
            m.int += c.int;
            m.exp += c.exp;
            m.sent += c.sent;
            m.total += c.total;
        }
        Self { gen: m.gen / n, ep: m.ep / n, int: m.int / n, exp: m.exp / n, sent: m.sent / n, total: m.total / n }
    }
}

/// A training or evaluation example together with its synthetic labels.
#[derive(Debug, Clone)]
pub struct GenExample {
    pub example: Example,
    pub labels: EmpathyLabels,
}

/// Joins pairs, their retrieved exemplars (if any) and their labels.
pub fn build_examples(
    pairs: &[ContextResponsePair],
    vocab: &Vocab,
    retrievals: Option<&[RetrievalResult]>,
    labels: &LabelSet,
) -> Result<Vec<GenExample>> {
    if let Some(r) = retrievals {
        if r.len() != pairs.len() {
            return Err(Error::Contract(format!("{} retrieval results for {} pairs", r.len(), pairs.len())));
        }
    }
    let by_pair = labels.by_pair();
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let labels = by_pair
                .get(p.pair_id.as_str())
                .copied()
                .ok_or_else(|| Error::Contract(format!("no synthetic labels for pair `{}`", p.pair_id)))?;
            let exemplars = retrievals.map_or_else(Vec::new, |r| r[i].exemplars.iter().map(|e| e.tokens.clone()).collect());
            Ok(GenExample {
                example: Example {
                    pair_id: p.pair_id.clone(),
                    context: ContextIds::from_pair(p, vocab),
                    gold: vocab.encode(&p.response.tokens),
                    exemplars,
                },
                labels: *labels,
            })
        })
        .collect()
}

/// Builds the weighted objective for one example on `tape`.
pub fn example_loss(
    model: &ExemplarModel,
    tape: &mut Tape,
    store: &ParamStore,
    ex: &GenExample,
    objective: &TrainingObjective,
) -> Result<(Var, LossComponents)> {
    let f = model.forward_with(tape, store, &ex.example)?;
    let l = &ex.labels;
    let ep = tape.cross_entropy(f.aux.ep_logits, &[l.ep as usize], usize::MAX)?;
    let int = tape.cross_entropy(f.aux.int_logits, &[l.int as usize], usize::MAX)?;
    let exp = tape.cross_entropy(f.aux.exp_logits, &[l.exp as usize], usize::MAX)?;
    let sent = tape.mse(f.aux.sentiment, l.sentiment);
    let parts = [f.l_gen, ep, int, exp, sent];
    let mut total = tape.scale(parts[0], objective.alpha_gen);
    for (v, a) in parts[1..].iter().zip(&objective.alphas()[1..]) {
        let w = tape.scale(*v, *a);
        total = tape.add(total, w);
    }
    let c = LossComponents {
        gen: tape.value(f.l_gen).item(),
        ep: tape.value(ep).item(),
        int: tape.value(int).item(),
        exp: tape.value(exp).item(),
        sent: tape.value(sent).item(),
        total: tape.value(total).item(),
    };
    Ok((total, c))
}

/// Mean components over `examples` without building gradients.
pub fn evaluate_losses(model: &ExemplarModel, examples: &[GenExample], objective: &TrainingObjective) -> Result<LossComponents> {
    if examples.is_empty() {
        return Err(Error::Contract("no examples to evaluate".into()));
    }
    let all = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new();
            Ok(example_loss(model, &mut tape, &model.store, ex, objective)?.1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossComponents::mean(&all))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    /// Batch means; `total` is the mean of the per-example objectives.
    pub losses: LossComponents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's steps.
    pub train: LossComponents,
    pub valid: Option<LossComponents>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation losses of the untrained model.
    pub initial_valid: Option<LossComponents>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where the last finite weights go when training diverges.
    pub divergence_checkpoint: Option<PathBuf>,
}

fn check_ready(model: &ExemplarModel, examples: &[GenExample], what: &str) -> Result<()> {
    for ex in examples {
        if model.config.use_exemplars && ex.example.exemplars.is_empty() {
            return Err(Error::Contract(format!("{what} pair `{}` has no retrieved exemplars", ex.example.pair_id)));
        }
        EmpathyLabels::new(ex.labels.discrete(), ex.labels.sentiment)?;
    }
    Ok(())
}

/// Adam on the weighted objective over shuffled mini-batches. With a
/// validation set, stops once `patience` epochs pass without a lower
/// validation total and restores the best weights.
pub fn train_generator(
    model: &mut ExemplarModel,
    train: &[GenExample],
    valid: &[GenExample],
    objective: &TrainingObjective,
    options: &TrainOptions,
) -> Result<TrainHistory> {
    objective.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("no generator training examples".into()));
    }
    check_ready(model, train, "training")?;
    check_ready(model, valid, "validation")?;

    let mut rng = ChaCha8Rng::seed_from_u64(objective.seed);
    let mut adam = AdamState::new(AdamConfig::with_lr(objective.learning_rate), &model.store);
    let mut history = TrainHistory {
        initial_valid: if valid.is_empty() { None } else { Some(evaluate_losses(model, valid, objective)?) },
        steps: Vec::new(),
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 1..=objective.epochs {
        order.shuffle(&mut rng);
        let first_step = history.steps.len();
        for chunk in order.chunks(objective.batch_size) {
            step += 1;
            let batch: Vec<&GenExample> = chunk.iter().map(|&i| &train[i]).collect();
            let scale = 1.0 / batch.len() as f64;
            let m = &*model;
            let (out, grads) = batch_gradients_with(&m.store, &batch, scale, |tape, ex| {
                example_loss(m, tape, &m.store, ex, objective)
            })
            .map_err(|e| diverged(epoch, step, e))?;
            let parts: Vec<LossComponents> = out.into_iter().map(|(_, c)| c).collect();
            let losses = LossComponents::mean(&parts);
            if !losses.total.is_finite() {
                if let Some(path) = &options.divergence_checkpoint {
                    save_checkpoint(path, &model.store, &model.config.digest())?;
                }
                return Err(Error::Diverged { epoch, step, detail: format!("batch loss {}", losses.total) });
            }
            let before = options.divergence_checkpoint.as_ref().map(|_| model.store.clone());
            model.store.merge_grads(&grads);
            adam.step(&mut model.store).map_err(|e| diverged(epoch, step, e))?;
            if !model.store.all_finite() {
                if let (Some(path), Some(good)) = (&options.divergence_checkpoint, before) {
                    save_checkpoint(path, &good, &model.config.digest())?;
                }
                return Err(Error::Diverged { epoch, step, detail: "non-finite weights after update".into() });
            }
            history.steps.push(StepRecord { epoch, step, losses });
        }
        let epoch_steps: Vec<LossComponents> = history.steps[first_step..].iter().map(|s| s.losses).collect();
        let train_mean = LossComponents::mean(&epoch_steps);
        let v = if valid.is_empty() { None } else { Some(evaluate_losses(model, valid, objective)?) };
        log::debug!(
            "generator epoch {epoch}: train {:.5}, valid {}",
            train_mean.total,
            v.map_or("-".into(), |v| format!("{:.5} (L_gen {:.5})", v.total, v.gen))
        );
        history.epochs.push(EpochRecord { epoch, train: train_mean, valid: v });
        let Some(v) = v else {
            history.best_epoch = epoch;
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| v.total < *b) {
            best = Some((v.total, model.store.clone()));
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= objective.patience {
            history.stopped_early = true;
            break;
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(history)
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NanGradient(name) => Error::Diverged { epoch, step, detail: format!("non-finite gradient in `{name}`") },
        Error::NonFinite { op, node } => Error::Diverged { epoch, step, detail: format!("non-finite value from {op} at node {node}") },
        other => other,
    }
}
