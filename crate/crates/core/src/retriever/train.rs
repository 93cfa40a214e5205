use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{BiEncoder, EncodedDprSample};
use crate::error::{Error, Result};
use crate::tensor::{batch_gradients, AdamConfig, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverSchedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for RetrieverSchedule {
    fn default() -> Self {
        Self { epochs: 100, learning_rate: 1e-3, batch_size: 8, patience: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverReport {
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    /// Mean training loss per epoch, after that epoch's updates.
    pub train_loss: Vec<f64>,
    /// Mean validation loss per epoch (empty without a validation set).
    pub valid_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn mean_loss(enc: &BiEncoder, samples: &[EncodedDprSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mut tape = crate::tensor::Tape::new();
        let l = enc.sample_loss(&mut tape, &enc.store, s)?;
        total += tape.value(l).item();
    }
    Ok(total / samples.len() as f64)
}

/// Adam on mean `dpr_loss` over shuffled mini-batches. With a validation
/// set, stops after `patience` epochs without improvement and restores the
/// best weights.
pub fn train_retriever(
    enc: &mut BiEncoder,
    train: &[EncodedDprSample],
    valid: &[EncodedDprSample],
    schedule: &RetrieverSchedule,
) -> Result<RetrieverReport> {
    if train.is_empty() {
        return Err(Error::Contract("no retriever training samples".into()));
    }
    if schedule.batch_size == 0 {
        return Err(Error::Contract("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut adam = AdamState::new(AdamConfig::with_lr(schedule.learning_rate), &enc.store);
    let initial_loss = mean_loss(enc, train)?;
    let mut report = RetrieverReport {
        initial_loss,
        train_loss: Vec::new(),
        valid_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, crate::tensor::ParamStore)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(schedule.batch_size) {
            step += 1;
            let batch: Vec<&EncodedDprSample> = chunk.iter().map(|&i| &train[i]).collect();
            let scale = 1.0 / batch.len() as f64;
            let (losses, grads) = batch_gradients(&enc.store, &batch, scale, |tape, s| enc.sample_loss(tape, &enc.store, s))
                .map_err(|e| diverged(epoch, step, e))?;
            if let Some(l) = losses.iter().find(|l| !l.is_finite()) {
                return Err(Error::Diverged { epoch, step, detail: format!("batch loss {l}") });
            }
            enc.store.merge_grads(&grads);
            adam.step(&mut enc.store)?;
            if !enc.store.all_finite() {
                return Err(Error::Diverged { epoch, step, detail: "non-finite weights after update".into() });
            }
        }
        let train_loss = mean_loss(enc, train)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch, step, detail: format!("epoch loss {train_loss}") });
        }
        report.train_loss.push(train_loss);
        log::debug!("dpr epoch {epoch}: train {train_loss:.5}");
        if valid.is_empty() {
            report.best_epoch = epoch;
            continue;
        }
        let v = mean_loss(enc, valid)?;
        report.valid_loss.push(v);
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, enc.store.clone()));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= schedule.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        enc.store = store;
    }
    Ok(report)
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NanGradient(name) => Error::Diverged { epoch, step, detail: format!("non-finite gradient in `{name}`") },
        Error::NonFinite { op, node } => Error::Diverged { epoch, step, detail: format!("non-finite value from {op} at node {node}") },
        other => other,
    }
}

/// Fraction of samples whose positive outscores every negative.
pub fn rank_first_rate(enc: &BiEncoder, samples: &[EncodedDprSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for s in samples {
        let scores = enc.sample_scores(s)?;
        if scores[1..].iter().all(|&n| scores[0] > n) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}
