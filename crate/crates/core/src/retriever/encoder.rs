use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DprSample, Vocab};
use crate::error::{Error, Result};
use crate::model::{ContextIds, EncoderStack, ModelConfig};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Token ids of one training sample: context, gold response, negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDprSample {
    pub pair_id: String,
    pub context: ContextIds,
    pub positive: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

impl EncodedDprSample {
    pub fn new(sample: &DprSample, vocab: &Vocab) -> Self {
        Self {
            pair_id: sample.pair_id.clone(),
            context: ContextIds::from_utterances(&sample.context, vocab),
            positive: vocab.encode(&sample.positive),
            negatives: sample.negatives.iter().map(|n| vocab.encode(&n.tokens)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct Tower {
    word: ParamId,
    speaker: Option<ParamId>,
    encoder: EncoderStack,
}

impl Tower {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, speakers: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        let word = store.add_uniform(format!("{name}.embed.word"), &[cfg.vocab_size, cfg.n_emb], 1, rng)?;
        let speaker = if speakers {
            Some(store.add_uniform(format!("{name}.embed.speaker"), &[2, cfg.n_emb], 1, rng)?)
        } else {
            None
        };
        let encoder = EncoderStack::new(store, &format!("{name}.encoder"), cfg, rng)?;
        Ok(Self { word, speaker, encoder })
    }

    fn encode(&self, tape: &mut Tape, store: &ParamStore, tokens: &[usize], speakers: Option<&[usize]>, max_input: usize) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        if tokens.len() > max_input {
            return Err(Error::Contract(format!("sequence of {} tokens exceeds {max_input}", tokens.len())));
        }
        let table = tape.param(store, self.word);
        let mut x = tape.embedding(table, tokens);
        if let (Some(sid), Some(s)) = (self.speaker, speakers) {
            let table = tape.param(store, sid);
            let e = tape.embedding(table, s);
            x = tape.add(x, e);
        }
        let h = self.encoder.forward(tape, store, x, None);
        let pooled = tape.mean_axis(h, 0);
        // keeps initial dot products O(1) so the untrained score
        // distribution is close to uniform
        let width = tape.shape(pooled)[1] as f64;
        Ok(tape.scale(pooled, width.powf(-0.25)))
    }
}

/// Query (context) and candidate (response) encoders with disjoint weights,
/// each mean-pooled to one vector of width `n_emb`.
#[derive(Debug, Clone)]
pub struct BiEncoder {
    pub config: ModelConfig,
    pub store: ParamStore,
    query: Tower,
    candidate: Tower,
}

impl BiEncoder {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let query = Tower::new(&mut store, "dpr.query", config, true, &mut rng)?;
        let candidate = Tower::new(&mut store, "dpr.cand", config, false, &mut rng)?;
        Ok(Self { config: config.clone(), store, query, candidate })
    }

    pub fn encode_query(&self, tape: &mut Tape, store: &ParamStore, ctx: &ContextIds) -> Result<Var> {
        if ctx.tokens.len() != ctx.speakers.len() {
            return Err(Error::shape("encode_query", "token and speaker ids differ in length"));
        }
        self.query.encode(tape, store, &ctx.tokens, Some(&ctx.speakers), self.config.max_input)
    }

    pub fn encode_candidate(&self, tape: &mut Tape, store: &ParamStore, tokens: &[usize]) -> Result<Var> {
        self.candidate.encode(tape, store, tokens, None, self.config.max_input)
    }

    pub fn query_vector(&self, ctx: &ContextIds) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.encode_query(&mut tape, &self.store, ctx)?;
        Ok(tape.value(v).data().to_vec())
    }

    pub fn candidate_vector(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.encode_candidate(&mut tape, &self.store, tokens)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// `dpr_loss` of one sample on `tape`.
    pub fn sample_loss(&self, tape: &mut Tape, store: &ParamStore, s: &EncodedDprSample) -> Result<Var> {
        let c = self.encode_query(tape, store, &s.context)?;
        let pos = self.encode_candidate(tape, store, &s.positive)?;
        let negs = s
            .negatives
            .iter()
            .map(|n| self.encode_candidate(tape, store, n))
            .collect::<Result<Vec<_>>>()?;
        dpr_loss_var(tape, c, pos, &negs)
    }

    /// Similarities of the positive followed by each negative.
    pub fn sample_scores(&self, s: &EncodedDprSample) -> Result<Vec<f64>> {
        let c = self.query_vector(&s.context)?;
        std::iter::once(&s.positive)
            .chain(&s.negatives)
            .map(|r| dpr_similarity(&c, &self.candidate_vector(r)?))
            .collect()
    }
}

pub fn dpr_similarity(c: &[f64], r: &[f64]) -> Result<f64> {
    if c.len() != r.len() {
        return Err(Error::shape("dpr_similarity", format!("widths {} and {}", c.len(), r.len())));
    }
    Ok(c.iter().zip(r).map(|(a, b)| a * b).sum())
}

/// `−log(e^{s⁺} / (e^{s⁺} + Σ e^{s⁻}))` over dot-product scores.
pub fn dpr_loss(c: &[f64], positive: &[f64], negatives: &[Vec<f64>]) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Contract("dpr_loss needs at least one negative".into()));
    }
    let pos = dpr_similarity(c, positive)?;
    let scores = negatives.iter().map(|n| dpr_similarity(c, n)).collect::<Result<Vec<_>>>()?;
    let m = scores.iter().copied().fold(pos, f64::max);
    let denom = (pos - m).exp() + scores.iter().map(|s| (s - m).exp()).sum::<f64>();
    Ok(m + denom.ln() - pos)
}

/// Differentiable `dpr_loss` for `1 × n` query and candidate rows.
pub fn dpr_loss_var(tape: &mut Tape, c: Var, positive: Var, negatives: &[Var]) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::Contract("dpr_loss needs at least one negative".into()));
    }
    let mut rows = Vec::with_capacity(negatives.len() + 1);
    rows.push(positive);
    rows.extend_from_slice(negatives);
    let cands = tape.concat(&rows, 0);
    let scores = tape.matmul_t(c, false, cands, true);
    tape.cross_entropy(scores, &[0], usize::MAX)
}
