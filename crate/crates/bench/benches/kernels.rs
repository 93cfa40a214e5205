use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use exgen_core::corpus::{generate_toy_corpus, pairs_for, EmotionLabel, EmotionManifest, ToyCorpusConfig, Vocab};
use exgen_core::harness::{build_examples, example_loss, TrainingObjective};
use exgen_core::model::{ExemplarModel, ModelConfig};
use exgen_core::retriever::{top_q, CandidatePool, PoolEntry};
use exgen_core::signals::{synthesize_corpus_labels, RuleLabeler, SentimentLexicon};
use exgen_core::{Tape, Tensor};

fn filled(shape: &[usize], k: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| (i as f64 * k).sin()).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let a = filled(&[64, 64], 0.37);
    let b = filled(&[64, 64], 0.91);
    c.bench_function("matmul 64x64 forward+backward", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let x = t.constant(a.clone());
            let y = t.constant(b.clone());
            let z = t.matmul(x, y);
            let s = t.sum(z);
            black_box(t.backward(s).unwrap());
        })
    });
}

fn model_step(c: &mut Criterion) {
    let manifest = EmotionManifest::default();
    let dialogues = generate_toy_corpus(&ToyCorpusConfig { dialogues: 20, ..Default::default() }, &manifest).unwrap();
    let vocab = Vocab::build(&dialogues, None);
    let pairs = pairs_for(&dialogues);
    let labels = synthesize_corpus_labels(&pairs, &RuleLabeler::default(), &SentimentLexicon::default()).unwrap();
    let mut examples = build_examples(&pairs[..4], &vocab, None, &labels).unwrap();
    for (i, x) in examples.iter_mut().enumerate() {
        x.example.exemplars = vec![vocab.encode(&pairs[i + 5].response.tokens)];
    }
    let model = ExemplarModel::new(&ModelConfig::desk(vocab.len())).unwrap();
    let obj = TrainingObjective::default();
    c.bench_function("objective forward+backward (desk model)", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (loss, _) = example_loss(&model, &mut t, &model.store, &examples[0], &obj).unwrap();
            black_box(t.backward(loss).unwrap());
        })
    });
}

fn retrieval(c: &mut Criterion) {
    let entries = (0..1000)
        .map(|i| PoolEntry {
            tokens: vec![i],
            source_dialogue_id: format!("d{}", i % 50),
            vector: filled(&[64], 0.1 + i as f64 * 1e-3).data().to_vec(),
        })
        .collect();
    let pool = CandidatePool { emotion: EmotionLabel { id: 0, name: "afraid".into() }, entries };
    let query = filled(&[64], 0.53).data().to_vec();
    c.bench_function("top-10 over 1000 candidates", |bench| {
        bench.iter(|| black_box(top_q(&pool, &query, "d3", 10).unwrap()))
    });
}

criterion_group!(benches, matmul, model_step, retrieval);
criterion_main!(benches);
