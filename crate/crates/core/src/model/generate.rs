use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::seq2seq::EncoderDecoder;
use crate::corpus::{EOS, START};
use crate::tensor::{softmax, ParamStore, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    TopK(usize),
}

impl Default for DecodeMode {
    fn default() -> Self {
        DecodeMode::Greedy
    }
}

/// Autoregressive decoding from `<start>` until `<eos>` or `max_len`
/// tokens. The returned ids exclude `<start>` and `<eos>`.
pub fn generate(
    net: &EncoderDecoder,
    store: &ParamStore,
    memory: &Tensor,
    mode: DecodeMode,
    seed: u64,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![START];
    let mut out = Vec::new();
    while out.len() < net.config.max_len {
        let mut tape = Tape::new();
        let m = tape.constant(memory.clone());
        let dec = net.decode(&mut tape, store, m, &inputs);
        let logits = tape.value(dec.logits);
        let last = logits.row(logits.dims2().0 - 1);
        let next = match mode {
            DecodeMode::Greedy => argmax(last),
            DecodeMode::TopK(k) => sample_top_k(last, k.max(1), &mut rng),
        };
        if next == EOS {
            break;
        }
        out.push(next);
        inputs.push(next);
    }
    out
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_top_k<R: Rng>(logits: &[f64], k: usize, rng: &mut R) -> usize {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k);
    let top = Tensor::vector(order.iter().map(|&i| logits[i]).collect());
    let p = softmax(&top, 0).expect("non-empty");
    let mut u: f64 = rng.gen();
    for (i, &pi) in p.data().iter().enumerate() {
        if u < pi {
            return order[i];
        }
        u -= pi;
    }
    order[order.len() - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn top_k_stays_within_top_set() {
        let logits = [0.0, 5.0, 4.0, -1.0, 4.5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = sample_top_k(&logits, 2, &mut rng);
            assert!(t == 1 || t == 4);
        }
    }
}
