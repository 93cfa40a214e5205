use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Attribute, DiscreteLabels, ResponseLabeler};
use crate::corpus::{Vocab, EOS, START};
use crate::error::{Error, Result};
use crate::metrics::weighted_f1_and_accuracy;
use crate::model::{EncoderStack, Linear, ModelConfig};
use crate::tensor::{batch_gradients, AdamConfig, AdamState, ParamId, ParamStore, Tape, Var};

pub const MIN_TRIPLETS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTriplet {
    pub context: Vec<String>,
    pub response: Vec<String>,
    pub labels: DiscreteLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelerTraining {
    pub model: ModelConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Share of the triplets held out for the report.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for LabelerTraining {
    fn default() -> Self {
        let model = ModelConfig { n_emb: 32, n_layers: 1, n_heads: 4, ffn_width: 64, ..ModelConfig::desk(4) };
        Self { model, epochs: 15, learning_rate: 3e-3, batch_size: 16, validation_fraction: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelerReport {
    pub attribute: Attribute,
    pub accuracy: f64,
    pub weighted_f1: f64,
    /// Accuracy of always predicting the most frequent training class.
    pub majority_baseline: f64,
    pub train_indices: Vec<usize>,
    pub valid_indices: Vec<usize>,
    pub train_loss: Vec<f64>,
}

/// Encoder over `<start> context <eos> response` with a 3-way head on the
/// start position.
#[derive(Debug, Clone)]
pub struct StandInLabeler {
    pub attribute: Attribute,
    pub vocab: Vocab,
    pub config: ModelConfig,
    pub store: ParamStore,
    embed: ParamId,
    encoder: EncoderStack,
    head: Linear,
}

impl StandInLabeler {
    fn new(attribute: Attribute, vocab: Vocab, config: ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let n = config.n_emb;
        let embed = store.add_uniform("labeler.embed", &[config.vocab_size, n], n, &mut rng)?;
        let encoder = EncoderStack::new(&mut store, "labeler.encoder", &config, &mut rng)?;
        let head = Linear::new(&mut store, "labeler.head", n, 3, true, &mut rng)?;
        Ok(Self { attribute, vocab, config, store, embed, encoder, head })
    }

    fn input_ids(&self, context: &[String], response: &[String]) -> Vec<usize> {
        let budget = self.config.max_input.saturating_sub(2 + response.len().min(self.config.max_input - 2));
        let ctx = &context[context.len().saturating_sub(budget)..];
        let mut ids = vec![START];
        ids.extend(self.vocab.encode(ctx));
        ids.push(EOS);
        ids.extend(self.vocab.encode(response));
        ids.truncate(self.config.max_input);
        ids
    }

    fn logits(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Var {
        let table = tape.param(store, self.embed);
        let x = tape.embedding(table, ids);
        let h = self.encoder.forward(tape, store, x, None);
        let first = tape.narrow(h, 0, 0, 1);
        self.head.forward(tape, store, first)
    }

    pub fn predict(&self, context: &[String], response: &[String]) -> u8 {
        let mut tape = Tape::new();
        let ids = self.input_ids(context, response);
        let l = self.logits(&mut tape, &self.store, &ids);
        let row = tape.value(l).data();
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        best as u8
    }

    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        for (_, p) in self.store.iter() {
            bytes.extend(p.name.as_bytes());
            for v in p.tensor.data() {
                bytes.extend(v.to_le_bytes());
            }
        }
        for t in self.vocab.tokens() {
            bytes.extend(t.as_bytes());
            bytes.push(0);
        }
        crate::util::hex(&crate::util::sha256(&bytes))
    }
}

/// Three trained stand-ins used together as a labeler.
#[derive(Debug, Clone)]
pub struct ModelLabeler {
    pub ep: StandInLabeler,
    pub int: StandInLabeler,
    pub exp: StandInLabeler,
}

impl ResponseLabeler for ModelLabeler {
    fn label(&self, context: &[String], response: &[String]) -> DiscreteLabels {
        DiscreteLabels {
            ep: self.ep.predict(context, response),
            int: self.int.predict(context, response),
            exp: self.exp.predict(context, response),
        }
    }

    fn digest(&self) -> String {
        format!("model:{}:{}:{}", self.ep.digest(), self.int.digest(), self.exp.digest())
    }
}

/// Trains a classifier for one attribute on a seeded 80/20 split of the
/// triplets and reports accuracy and weighted F1 on the held-out part.
pub fn train_stand_in_labeler(
    triplets: &[LabeledTriplet],
    attribute: Attribute,
    training: &LabelerTraining,
) -> Result<(StandInLabeler, LabelerReport)> {
    if triplets.len() < MIN_TRIPLETS {
        return Err(Error::Insufficient(format!(
            "labeler training needs at least {MIN_TRIPLETS} triplets, got {}",
            triplets.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(training.seed);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    order.shuffle(&mut rng);
    let n_valid = ((triplets.len() as f64 * training.validation_fraction).round() as usize).clamp(1, triplets.len() - 1);
    let valid_indices: Vec<usize> = order[..n_valid].to_vec();
    let train_indices: Vec<usize> = order[n_valid..].to_vec();

    let label = |i: usize| triplets[i].labels.get(attribute);
    let mut counts = [0usize; 3];
    for &i in &train_indices {
        counts[label(i) as usize] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Contract(format!(
            "class {missing} of {} missing from the training portion",
            attribute.short()
        )));
    }

    let vocab = Vocab::from_sequences(
        train_indices.iter().flat_map(|&i| [&triplets[i].context[..], &triplets[i].response[..]]),
        None,
    );
    let config = ModelConfig { vocab_size: vocab.len(), seed: training.seed, ..training.model.clone() };
    let mut model = StandInLabeler::new(attribute, vocab, config)?;
    let inputs: Vec<(Vec<usize>, usize)> = triplets
        .iter()
        .map(|t| (model.input_ids(&t.context, &t.response), t.labels.get(attribute) as usize))
        .collect();

    let mut adam = AdamState::new(AdamConfig::with_lr(training.learning_rate), &model.store);
    let mut order = train_indices.clone();
    let mut train_loss = Vec::with_capacity(training.epochs);
    for _ in 0..training.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(training.batch_size.max(1)) {
            let batch: Vec<&(Vec<usize>, usize)> = chunk.iter().map(|&i| &inputs[i]).collect();
            let (losses, grads) = batch_gradients(&model.store, &batch, 1.0 / batch.len() as f64, |tape, (ids, y)| {
                let l = model.logits(tape, &model.store, ids);
                tape.cross_entropy(l, &[*y], usize::MAX)
            })?;
            total += losses.iter().sum::<f64>();
            model.store.merge_grads(&grads);
            adam.step(&mut model.store)?;
        }
        train_loss.push(total / order.len() as f64);
    }

    let gold: Vec<u8> = valid_indices.iter().map(|&i| label(i)).collect();
    let pred: Vec<u8> = valid_indices
        .iter()
        .map(|&i| model.predict(&triplets[i].context, &triplets[i].response))
        .collect();
    let classes: BTreeSet<u8> = [0, 1, 2].into();
    let (accuracy, weighted_f1) = weighted_f1_and_accuracy(&gold, &pred, &classes)?;
    let majority = counts.iter().enumerate().max_by_key(|(_, c)| **c).map(|(k, _)| k as u8).unwrap_or(0);
    let majority_baseline = 100.0 * gold.iter().filter(|&&g| g == majority).count() as f64 / gold.len() as f64;
    Ok((
        model,
        LabelerReport { attribute, accuracy, weighted_f1, majority_baseline, train_indices, valid_indices, train_loss },
    ))
}
