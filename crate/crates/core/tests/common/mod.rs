//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use exgen_core::corpus::{generate_toy_corpus, pairs_for, EmotionManifest, ToyCorpusConfig, Vocab};
use exgen_core::harness::{build_examples, example_loss, TrainingObjective};
use exgen_core::model::{ExemplarModel, ModelConfig};
use exgen_core::retriever::{dpr_loss_var, BiEncoder, EncodedDprSample};
use exgen_core::signals::{synthesize_corpus_labels, RuleLabeler, SentimentLexicon};
use exgen_core::tensor::{finite_difference_check, param_gradient_check, GradCheckReport, ParamId};
use exgen_core::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Values bounded away from zero, for kinks.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut t = random(shape, seed);
    for v in t.data_mut() {
        *v = v.signum() * (0.2 + v.abs());
    }
    t
}

/// A scalar that depends on every element of `y` with a distinct weight.
pub fn probe(t: &mut Tape, y: Var) -> Var {
    let shape = t.shape(y).to_vec();
    let w = t.constant(random(&shape, 999));
    let p = t.mul(y, w);
    t.sum(p)
}

type Check = (&'static str, Result<GradCheckReport>);

fn unary(name: &'static str, input: Tensor, f: impl Fn(&mut Tape, Var) -> Var) -> Check {
    (name, finite_difference_check(|t, x| { let y = f(t, x); Ok(probe(t, y)) }, &input, PRIMITIVE_TOL))
}

/// One check per differentiable primitive and per operand.
pub fn primitive_checks() -> Vec<Check> {
    let a = random(&[3, 4], 1);
    let b = random(&[4, 2], 2);
    let same = random(&[3, 4], 3);
    let row = random(&[1, 4], 4);
    let mut out = vec![
        unary("matmul lhs", a.clone(), |t, x| { let b = t.constant(b.clone()); t.matmul(x, b) }),
        unary("matmul rhs", b.clone(), |t, x| { let a = t.constant(a.clone()); t.matmul(a, x) }),
        unary("matmul lhs transposed", random(&[4, 3], 5), |t, x| { let b = t.constant(b.clone()); t.matmul_t(x, true, b, false) }),
        unary("matmul rhs transposed", random(&[2, 4], 6), |t, x| { let a = t.constant(a.clone()); t.matmul_t(a, false, x, true) }),
        unary("matmul both transposed", random(&[4, 3], 7), |t, x| { let c = t.constant(random(&[2, 4], 8)); t.matmul_t(x, true, c, true) }),
        unary("add", a.clone(), |t, x| { let c = t.constant(same.clone()); t.add(x, c) }),
        unary("sub lhs", a.clone(), |t, x| { let c = t.constant(same.clone()); t.sub(x, c) }),
        unary("sub rhs", a.clone(), |t, x| { let c = t.constant(same.clone()); t.sub(c, x) }),
        unary("mul", a.clone(), |t, x| { let c = t.constant(same.clone()); t.mul(x, c) }),
        unary("mul self", a.clone(), |t, x| t.mul(x, x)),
        unary("add_row matrix", a.clone(), |t, x| { let r = t.constant(row.clone()); t.add_row(x, r) }),
        unary("add_row row", row.clone(), |t, x| { let m = t.constant(a.clone()); t.add_row(m, x) }),
        unary("scale", a.clone(), |t, x| t.scale(x, -2.5)),
        unary("tanh", a.clone(), |t, x| t.tanh(x)),
        unary("relu", away_from_zero(&[3, 4], 9), |t, x| t.relu(x)),
        unary("softmax rows", a.clone(), |t, x| t.softmax(x, 1)),
        unary("softmax columns", a.clone(), |t, x| t.softmax(x, 0)),
        unary("log_softmax", a.clone(), |t, x| t.log_softmax(x, 1)),
        unary("concat rows", a.clone(), |t, x| { let c = t.constant(random(&[2, 4], 10)); t.concat(&[c, x, c], 0) }),
        unary("concat columns", a.clone(), |t, x| { let c = t.constant(random(&[3, 1], 11)); t.concat(&[x, c], 1) }),
        unary("narrow rows", a.clone(), |t, x| t.narrow(x, 0, 1, 2)),
        unary("narrow columns", a.clone(), |t, x| t.narrow(x, 1, 1, 2)),
        unary("mean_axis rows", a.clone(), |t, x| t.mean_axis(x, 0)),
        unary("mean_axis columns", a.clone(), |t, x| t.mean_axis(x, 1)),
        unary("sum", a.clone(), |t, x| { let s = t.sum(x); t.mul(s, s) }),
        unary("mean", a.clone(), |t, x| { let s = t.mean(x); t.mul(s, s) }),
        unary("embedding table", random(&[5, 3], 12), |t, x| t.embedding(x, &[4, 0, 4, 2])),
        unary("gather", a.clone(), |t, x| t.gather(x, vec![0, 5, 5, 11, 3, 0], vec![2, 3])),
        unary("rms norm input", a.clone(), |t, x| { let g = t.constant(row.clone()); t.norm(x, g, None, false, 1e-6) }),
        unary("rms norm gain", row.clone(), |t, g| { let x = t.constant(a.clone()); t.norm(x, g, None, false, 1e-6) }),
        unary("layer norm input", a.clone(), |t, x| {
            let g = t.constant(row.clone());
            let b = t.constant(random(&[1, 4], 13));
            t.norm(x, g, Some(b), true, 1e-5)
        }),
        unary("layer norm bias", random(&[1, 4], 13), |t, b| {
            let x = t.constant(a.clone());
            let g = t.constant(row.clone());
            t.norm(x, g, Some(b), true, 1e-5)
        }),
        unary("masked_fill", a.clone(), |t, x| t.masked_fill(x, (0..12).map(|i| i % 3 == 1).collect(), 7.0)),
        unary("masked softmax", a.clone(), |t, x| {
            let m = t.masked_fill(x, (0..12).map(|i| i % 4 > i / 4).collect(), -1e9);
            t.softmax(m, 1)
        }),
        unary("transpose", a.clone(), |t, x| t.transpose(x)),
        unary("reshape", a.clone(), |t, x| t.reshape(x, vec![2, 6])),
        unary("dropout", a.clone(), |t, x| t.dropout(x, 0.3, &mut ChaCha8Rng::seed_from_u64(4))),
    ];
    let logits = random(&[4, 5], 14);
    out.push((
        "cross_entropy",
        finite_difference_check(|t, x| t.cross_entropy(x, &[1, 0, 4, 2], usize::MAX), &logits, PRIMITIVE_TOL),
    ));
    out.push((
        "cross_entropy ignore",
        finite_difference_check(|t, x| t.cross_entropy(x, &[1, 0, 0, 3], 0), &logits, PRIMITIVE_TOL),
    ));
    out.push(("mse", finite_difference_check(|t, x| Ok(t.mse(x, 0.3)), &Tensor::scalar(-0.7), PRIMITIVE_TOL)));
    out.push(("mse through tanh", finite_difference_check(|t, x| { let y = t.tanh(x); Ok(t.mse(y, -0.2)) }, &Tensor::scalar(0.4), PRIMITIVE_TOL)));
    out
}

/// Up to `per_param` evenly spaced elements of every trainable parameter.
pub fn sample_elements(store: &exgen_core::ParamStore, per_param: usize) -> Vec<(ParamId, usize)> {
    store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(id, p)| {
            let n = p.tensor.len();
            let k = per_param.min(n);
            (0..k).map(move |j| (id, (j * n) / k + (n / k) / 2))
        })
        .collect()
}

/// Gradient of the full weighted objective (desk preset, all five losses)
/// for one toy example, checked at sampled weights.
pub fn end_to_end_check() -> Result<GradCheckReport> {
    let manifest = EmotionManifest::default();
    let dialogues = generate_toy_corpus(&ToyCorpusConfig { dialogues: 20, ..Default::default() }, &manifest)?;
    let vocab = Vocab::build(&dialogues, None);
    let pairs = pairs_for(&dialogues);
    let labels = synthesize_corpus_labels(&pairs, &RuleLabeler::default(), &SentimentLexicon::default())?;
    let mut examples = build_examples(&pairs[..2], &vocab, None, &labels)?;
    let ex = &mut examples[1];
    ex.example.exemplars = vec![vocab.encode(&pairs[5].response.tokens), vocab.encode(&pairs[9].response.tokens)];
    ex.labels.sentiment = 0.35;
    let model = ExemplarModel::new(&ModelConfig::desk(vocab.len()))?;
    let objective = TrainingObjective::default();
    let elements = sample_elements(&model.store, 3);
    param_gradient_check(&model.store, &elements, |t, s| Ok(example_loss(&model, t, s, ex, &objective)?.0), END_TO_END_TOL)
}

/// Gradient of the retriever loss for one sample with seven negatives.
pub fn retriever_check() -> Result<GradCheckReport> {
    let manifest = EmotionManifest::default();
    let dialogues = generate_toy_corpus(&ToyCorpusConfig { dialogues: 40, ..Default::default() }, &manifest)?;
    let vocab = Vocab::build(&dialogues, None);
    let samples = exgen_core::corpus::build_dpr_samples(&pairs_for(&dialogues), 7, 1)?;
    let s = EncodedDprSample::new(&samples[0], &vocab);
    let enc = BiEncoder::new(&ModelConfig::desk(vocab.len()))?;
    let elements = sample_elements(&enc.store, 2);
    param_gradient_check(
        &enc.store,
        &elements,
        |t, store| {
            let c = enc.encode_query(t, store, &s.context)?;
            let p = enc.encode_candidate(t, store, &s.positive)?;
            let n = s.negatives.iter().map(|n| enc.encode_candidate(t, store, n)).collect::<Result<Vec<_>>>()?;
            dpr_loss_var(t, c, p, &n)
        },
        END_TO_END_TOL,
    )
}
