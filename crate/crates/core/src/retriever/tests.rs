use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{
    build_dpr_samples, generate_toy_corpus, pairs_for, tokenize, Dialogue, EmotionManifest, Speaker, ToyCorpusConfig,
    Utterance, Vocab,
};
use crate::error::Error;
use crate::model::ModelConfig;
use crate::tensor::{cross_entropy as ops_cross_entropy, Tape, Tensor};

fn small_cfg(vocab: usize) -> ModelConfig {
    ModelConfig { n_layers: 1, n_emb: 32, n_heads: 4, ffn_width: 64, ..ModelConfig::desk(vocab) }
}

fn toy_samples(n: usize) -> (Vocab, Vec<EncodedDprSample>) {
    let manifest = EmotionManifest::default();
    let dialogues = generate_toy_corpus(&ToyCorpusConfig::default(), &manifest).unwrap();
    let vocab = Vocab::build(&dialogues, None);
    let pairs = pairs_for(&dialogues);
    let samples = build_dpr_samples(&pairs, 7, 3).unwrap();
    let enc = samples.iter().take(n).map(|s| EncodedDprSample::new(s, &vocab)).collect();
    (vocab, enc)
}

#[test]
fn similarity_fixtures() {
    assert_eq!(dpr_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
    assert_eq!(dpr_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 5.0);
    assert_eq!(dpr_similarity(&[0.3, -2.0], &[1.5, 0.25]).unwrap(), dpr_similarity(&[1.5, 0.25], &[0.3, -2.0]).unwrap());
    assert!(matches!(dpr_similarity(&[1.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
}

#[test]
fn loss_fixtures() {
    let negs = vec![vec![1.0]; 7];
    assert!((dpr_loss(&[1.0], &[1.0], &negs).unwrap() - 8f64.ln()).abs() < 1e-12);
    let l = dpr_loss(&[1.0], &[2.0], &[vec![0.0], vec![0.0]]).unwrap();
    assert!((l - 0.23954).abs() < 5e-6, "{l}");
    assert!((l - (1.0 + 2.0 * (-2f64).exp()).ln()).abs() < 1e-12);
    assert!(dpr_loss(&[1.0], &[500.0], &[vec![0.0], vec![-3.0]]).unwrap() < 1e-12);
    assert!(dpr_loss(&[1.0], &[2.0], &[]).is_err());
}

proptest! {
    #[test]
    fn loss_is_softmax_cross_entropy(
        c in prop::collection::vec(-3.0f64..3.0, 4),
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 2..9),
    ) {
        let l = dpr_loss(&c, &rows[0], &rows[1..]).unwrap();
        let scores: Vec<f64> = rows.iter().map(|r| dpr_similarity(&c, r).unwrap()).collect();
        let n = scores.len();
        let ce = ops_cross_entropy(&Tensor::matrix(1, n, scores).unwrap(), &[0], usize::MAX).unwrap();
        prop_assert!((l - ce).abs() <= 1e-12);
        prop_assert!(l >= 0.0);

        let mut tape = Tape::new();
        let v = |t: &mut Tape, r: &Vec<f64>| t.constant(Tensor::matrix(1, 4, r.clone()).unwrap());
        let cv = v(&mut tape, &c);
        let pos = v(&mut tape, &rows[0]);
        let negs: Vec<_> = rows[1..].iter().map(|r| v(&mut tape, r)).collect();
        let lv = dpr_loss_var(&mut tape, cv, pos, &negs).unwrap();
        prop_assert!((tape.value(lv).item() - l).abs() <= 1e-12);
    }
}

#[test]
fn towers_have_disjoint_parameters() {
    let enc = BiEncoder::new(&small_cfg(40)).unwrap();
    let names: Vec<&str> = enc.store.iter().map(|(_, p)| p.name.as_str()).collect();
    assert!(names.iter().all(|n| n.starts_with("dpr.query.") || n.starts_with("dpr.cand.")));
    assert!(names.iter().any(|n| n.starts_with("dpr.query.")));
    assert!(names.iter().any(|n| n.starts_with("dpr.cand.")));

    // the loss reaches both towers
    let s = EncodedDprSample {
        pair_id: "x".into(),
        context: crate::model::ContextIds { tokens: vec![4, 5, 6], speakers: vec![0, 0, 0] },
        positive: vec![7, 8],
        negatives: vec![vec![9], vec![10, 11]],
    };
    let mut tape = Tape::new();
    let l = enc.sample_loss(&mut tape, &enc.store, &s).unwrap();
    let g = tape.backward(l).unwrap();
    let touched: Vec<&str> = tape
        .bound_params()
        .filter(|(_, v)| g.wrt(*v).is_some_and(|g| g.iter().any(|x| *x != 0.0)))
        .map(|(p, _)| enc.store.get(p).name.as_str())
        .collect();
    assert!(touched.iter().any(|n| n.starts_with("dpr.query.")));
    assert!(touched.iter().any(|n| n.starts_with("dpr.cand.")));
}

#[test]
fn untrained_loss_is_near_uniform() {
    let (vocab, samples) = toy_samples(32);
    let enc = BiEncoder::new(&ModelConfig::desk(vocab.len())).unwrap();
    let mut total = 0.0;
    for s in &samples {
        let mut tape = Tape::new();
        let l = enc.sample_loss(&mut tape, &enc.store, s).unwrap();
        total += tape.value(l).item();
    }
    let mean = total / samples.len() as f64;
    assert!((mean - 8f64.ln()).abs() < 0.2, "initial loss {mean}");
}

#[test]
fn short_training_is_deterministic_and_lowers_loss() {
    let (vocab, samples) = toy_samples(12);
    let sched = RetrieverSchedule { epochs: 4, batch_size: 4, ..RetrieverSchedule::default() };
    let run = || {
        let mut enc = BiEncoder::new(&small_cfg(vocab.len())).unwrap();
        train_retriever(&mut enc, &samples, &[], &sched).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.train_loss.len(), 4);
    assert!(a.train_loss[3] < a.initial_loss);
}

#[test]
fn early_stopping_restores_best_weights() {
    let (vocab, samples) = toy_samples(16);
    let (train, valid) = samples.split_at(12);
    let sched = RetrieverSchedule { epochs: 40, batch_size: 4, learning_rate: 3e-3, patience: 2, seed: 1 };
    let mut enc = BiEncoder::new(&small_cfg(vocab.len())).unwrap();
    let rep = train_retriever(&mut enc, train, valid, &sched).unwrap();
    let best = rep.valid_loss[rep.best_epoch - 1];
    assert!(rep.valid_loss.iter().all(|&v| v >= best));
    let mut total = 0.0;
    for s in valid {
        let mut tape = Tape::new();
        let l = enc.sample_loss(&mut tape, &enc.store, s).unwrap();
        total += tape.value(l).item();
    }
    assert!((total / valid.len() as f64 - best).abs() < 1e-12);
    if rep.stopped_early {
        assert_eq!(rep.valid_loss.len(), rep.best_epoch + 2);
    }
}

#[test]
fn empty_training_set_is_rejected() {
    let mut enc = BiEncoder::new(&small_cfg(20)).unwrap();
    assert!(train_retriever(&mut enc, &[], &[], &RetrieverSchedule::default()).is_err());
}

fn dialogue(id: &str, emotion: &str, turns: &[&str]) -> Dialogue {
    let manifest = EmotionManifest::default();
    Dialogue {
        dialogue_id: id.into(),
        emotion: manifest.label(emotion).unwrap(),
        utterances: turns
            .iter()
            .enumerate()
            .map(|(i, t)| Utterance { tokens: tokenize(t), speaker: Speaker::for_turn(i + 1), index: i + 1 })
            .collect(),
    }
}

fn two_emotion_corpus() -> Vec<Dialogue> {
    let turns = ["my dog is sick", "oh no", "he will not eat", "poor thing", "i am worried", "i hope he gets better"];
    vec![dialogue("d1", "sad", &turns), dialogue("d2", "joyful", &turns)]
}

#[test]
fn pools_by_emotion_and_round_trip() {
    let manifest = EmotionManifest::default();
    let dialogues = two_emotion_corpus();
    let vocab = Vocab::build(&dialogues, None);
    let enc = BiEncoder::new(&small_cfg(vocab.len())).unwrap();
    let pools = build_pools(&dialogues, &vocab, &enc, &manifest).unwrap();
    assert_eq!(pools.pools.len(), 2);
    for pool in pools.pools.values() {
        assert_eq!(pool.entries.len(), 3);
        let want = if pool.emotion.name == "sad" { "d1" } else { "d2" };
        assert!(pool.entries.iter().all(|e| e.source_dialogue_id == want));
    }
    assert_eq!(pools.warnings.len(), manifest.emotions.len() - 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pools.bin");
    save_pools(&path, &pools).unwrap();
    let back = load_pools(&path, &manifest).unwrap();
    assert_eq!(back.pools, pools.pools);
    for pool in back.pools.values() {
        for e in &pool.entries {
            assert_eq!(enc.candidate_vector(&e.tokens).unwrap(), e.vector);
        }
    }
}

#[test]
fn pool_file_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    std::fs::write(&path, b"not a pool").unwrap();
    assert!(load_pools(&path, &EmotionManifest::default()).is_err());
}

fn random_pool(rng: &mut ChaCha8Rng, n: usize, width: usize) -> CandidatePool {
    let manifest = EmotionManifest::default();
    CandidatePool {
        emotion: manifest.label("sad").unwrap(),
        entries: (0..n)
            .map(|i| PoolEntry {
                tokens: vec![i],
                source_dialogue_id: format!("d{}", rng.gen_range(0..n / 3 + 1)),
                vector: (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect(),
    }
}

fn brute_force(pool: &CandidatePool, query: &[f64], exclude: &str, q: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = pool
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.source_dialogue_id != exclude)
        .map(|(i, e)| (i, e.vector.iter().zip(query).map(|(a, b)| a * b).sum()))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(q);
    all
}

#[test]
fn top_q_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.gen_range(1..=1000);
        let pool = random_pool(&mut rng, n, 16);
        let query: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = rng.gen_range(1..=20);
        let exclude = format!("d{}", rng.gen_range(0..n / 3 + 1));
        let got = top_q(&pool, &query, &exclude, q).unwrap();
        let want = brute_force(&pool, &query, &exclude, q);
        let got_ids: Vec<usize> = got.exemplars.iter().map(|e| e.tokens[0]).collect();
        let want_ids: Vec<usize> = want.iter().map(|w| w.0).collect();
        assert_eq!(got_ids, want_ids);
        assert!(got.exemplars.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(got.exemplars.iter().all(|e| e.source_dialogue_id != exclude));
    }
}

#[test]
fn dominant_candidate_ranks_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pool = random_pool(&mut rng, 50, 8);
    let query: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    pool.entries.push(PoolEntry { tokens: vec![999], source_dialogue_id: "other".into(), vector: query.iter().map(|x| x * 10.0).collect() });
    let r = top_q(&pool, &query, "none", 5).unwrap();
    assert_eq!(r.exemplars[0].tokens, [999]);
}

#[test]
fn cap_and_shortfall() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool = random_pool(&mut rng, 12, 4);
    let excluded = pool.entries.iter().filter(|e| e.source_dialogue_id == "d0").count();
    let r = top_q(&pool, &[1.0, 0.0, 0.0, 0.0], "d0", 50).unwrap();
    assert_eq!(r.exemplars.len(), 12 - excluded);
    assert!(r.shortfall);
    let r = top_q(&pool, &[1.0, 0.0, 0.0, 0.0], "d0", 2).unwrap();
    assert!(!r.shortfall);
    assert_eq!(top_q(&pool, &[1.0, 0.0, 0.0, 0.0], "d0", 0).unwrap().exemplars.len(), 0);
}

#[test]
fn scores_are_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool = random_pool(&mut rng, 200, 8);
    let query: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut shuffled = pool.clone();
    rand::seq::SliceRandom::shuffle(&mut shuffled.entries[..], &mut rng);
    let a = top_q(&pool, &query, "x", 10).unwrap();
    let b = top_q(&shuffled, &query, "x", 10).unwrap();
    let key = |r: &RetrievalResult| r.exemplars.iter().map(|e| (e.tokens[0], e.score.to_bits())).collect::<Vec<_>>();
    assert_eq!(key(&a), key(&b));
}

#[test]
fn retrieval_over_corpus_respects_exclusion() {
    let manifest = EmotionManifest::default();
    let cfg = ToyCorpusConfig { dialogues: 40, ..ToyCorpusConfig::default() };
    let dialogues = generate_toy_corpus(&cfg, &manifest).unwrap();
    let vocab = Vocab::build(&dialogues, None);
    let enc = BiEncoder::new(&small_cfg(vocab.len())).unwrap();
    let pools = build_pools(&dialogues, &vocab, &enc, &manifest).unwrap();
    let pairs = pairs_for(&dialogues);
    let results = retrieve_for_pairs(&pairs, &vocab, &enc, &pools, 5).unwrap();
    for (p, r) in pairs.iter().zip(&results) {
        let pool = pools.get(p.emotion.id).unwrap();
        for e in &r.exemplars {
            assert_ne!(e.source_dialogue_id, p.source_dialogue_id);
            assert!(pool.entries.iter().any(|x| x.source_dialogue_id == e.source_dialogue_id));
        }
    }
    let mut missing = pairs[0].clone();
    missing.emotion = manifest.by_id(manifest.emotions.len() - 1).unwrap();
    assert!(!pools.pools.contains_key(&missing.emotion.id));
    assert!(matches!(retrieve_exemplars(&missing, &vocab, &enc, &pools, 5), Err(Error::MissingPool(_))));
}
