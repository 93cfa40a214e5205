//! Context encoder + decoder (the base network) and the exemplar-conditioned
//! generator built around it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::heads::{AuxHeads, AuxVars};
use super::layers::{DecoderStack, EncoderStack, Linear};
use crate::corpus::{ContextResponsePair, Utterance, Vocab, EOS, PAD, START};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Token and speaker ids of a concatenated context `u_1 ⊕ … ⊕ u_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextIds {
    pub tokens: Vec<usize>,
    pub speakers: Vec<usize>,
}

impl ContextIds {
    pub fn from_pair(pair: &ContextResponsePair, vocab: &Vocab) -> Self {
        Self::from_utterances(&pair.context, vocab)
    }

    pub fn from_utterances(utterances: &[Utterance], vocab: &Vocab) -> Self {
        let mut tokens = Vec::new();
        let mut speakers = Vec::new();
        for u in utterances {
            for t in &u.tokens {
                tokens.push(vocab.id(t));
                speakers.push(u.speaker.index());
            }
        }
        Self { tokens, speakers }
    }
}

/// Embedded context: row `i` is `word(token_i) + speaker(speaker_i)`.
#[derive(Debug, Clone, Copy)]
pub struct ContextEmbedding {
    pub matrix: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EncodedContext {
    pub z: Var,
}

/// Mean-pooled exemplar vectors and their mean.
#[derive(Debug, Clone)]
pub struct ExemplarEncoding {
    pub pooled: Vec<Var>,
    pub aggregate: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderOutput {
    /// Final decoder states, `t × n_emb`.
    pub hidden: Var,
    /// Vocabulary logits, `t × |V|`.
    pub logits: Var,
}

/// Teacher-forced decoder inputs (`<start>` + gold) and targets (gold + `<eos>`).
pub fn teacher_forcing(gold: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut inputs = Vec::with_capacity(gold.len() + 1);
    inputs.push(START);
    inputs.extend_from_slice(gold);
    let mut targets = gold.to_vec();
    targets.push(EOS);
    (inputs, targets)
}

/// Word and speaker embeddings, context encoder, decoder and output layer.
#[derive(Debug, Clone)]
pub struct EncoderDecoder {
    pub config: ModelConfig,
    word_emb: crate::tensor::ParamId,
    speaker_emb: crate::tensor::ParamId,
    encoder: EncoderStack,
    decoder: DecoderStack,
    lm_head: Linear,
}

impl EncoderDecoder {
    pub fn build(config: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let n = config.n_emb;
        Ok(Self {
            config: config.clone(),
            word_emb: store.add_uniform("embed.word", &[config.vocab_size, n], config.vocab_size, rng)?,
            speaker_emb: store.add_uniform("embed.speaker", &[2, n], 2, rng)?,
            encoder: EncoderStack::new(store, "encoder", config, rng)?,
            decoder: DecoderStack::new(store, "decoder", config, rng)?,
            lm_head: Linear::new(store, "lm_head", n, config.vocab_size, false, rng)?,
        })
    }

    pub fn word_embedding(&self) -> crate::tensor::ParamId {
        self.word_emb
    }

    pub fn embed_context(&self, tape: &mut Tape, store: &ParamStore, ctx: &ContextIds) -> Result<ContextEmbedding> {
        if ctx.tokens.is_empty() {
            return Err(Error::Contract("empty context".into()));
        }
        if ctx.tokens.len() != ctx.speakers.len() {
            return Err(Error::shape("embed_context", "token and speaker ids differ in length"));
        }
        let words = tape.param(store, self.word_emb);
        let speakers = tape.param(store, self.speaker_emb);
        let w = tape.embedding(words, &ctx.tokens);
        let s = tape.embedding(speakers, &ctx.speakers);
        Ok(ContextEmbedding { matrix: tape.add(w, s) })
    }

    pub fn encode_context(&self, tape: &mut Tape, store: &ParamStore, e: ContextEmbedding) -> Result<EncodedContext> {
        let k = tape.shape(e.matrix)[0];
        if k > self.config.max_input {
            return Err(Error::Contract(format!("context of {k} tokens exceeds {}", self.config.max_input)));
        }
        Ok(EncodedContext { z: self.encoder.forward(tape, store, e.matrix, None) })
    }

    /// Runs the decoder over `inputs` (word embeddings only) against `memory`.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, memory: Var, inputs: &[usize]) -> DecoderOutput {
        let words = tape.param(store, self.word_emb);
        let x = tape.embedding(words, inputs);
        let hidden = self.decoder.forward(tape, store, x, memory, None);
        let logits = self.lm_head.forward(tape, store, hidden);
        DecoderOutput { hidden, logits }
    }

    /// Teacher-forced decoding; returns the outputs and mean token NLL of
    /// `gold` followed by `<eos>`.
    pub fn decode_teacher_forced(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        memory: Var,
        gold: &[usize],
    ) -> Result<(DecoderOutput, Var)> {
        if gold.is_empty() {
            return Err(Error::Contract("empty gold response".into()));
        }
        if gold.len() > self.config.max_len {
            return Err(Error::Contract(format!(
                "gold response of {} tokens exceeds max_len {}",
                gold.len(),
                self.config.max_len
            )));
        }
        let (inputs, targets) = teacher_forcing(gold);
        let out = self.decode(tape, store, memory, &inputs);
        let loss = tape.cross_entropy(out.logits, &targets, PAD)?;
        Ok((out, loss))
    }

    /// Plain encoder-decoder forward: `L_gen` for one context/gold pair.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &ContextIds, gold: &[usize]) -> Result<(DecoderOutput, Var)> {
        let e = self.embed_context(tape, store, ctx)?;
        let z = self.encode_context(tape, store, e)?;
        self.decode_teacher_forced(tape, store, z.z, gold)
    }
}

/// Encoder-decoder without exemplars or auxiliary heads, owning its weights.
#[derive(Debug, Clone)]
pub struct BaseModel {
    pub net: EncoderDecoder,
    pub store: ParamStore,
}

impl BaseModel {
    /// Draws weights from the same seeded stream as [`ExemplarModel::new`],
    /// so both share every base-network weight for a given config.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let net = EncoderDecoder::build(config, &mut store, &mut rng)?;
        Ok(Self { net, store })
    }
}

/// Elementwise mean of equally shaped `1 × n` rows.
pub fn mean_of_vectors(tape: &mut Tape, rows: &[Var]) -> Var {
    if rows.len() == 1 {
        return rows[0];
    }
    let stacked = tape.concat(rows, 0);
    tape.mean_axis(stacked, 0)
}

/// Everything a training or evaluation step needs for one pair.
#[derive(Debug, Clone)]
pub struct Example {
    pub pair_id: String,
    pub context: ContextIds,
    pub gold: Vec<usize>,
    pub exemplars: Vec<Vec<usize>>,
}

/// Nodes produced by one full forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub memory: Var,
    pub output: DecoderOutput,
    pub l_gen: Var,
    pub aux: AuxVars,
}

/// Exemplar-conditioned generator with auxiliary empathy heads.
#[derive(Debug, Clone)]
pub struct ExemplarModel {
    pub config: ModelConfig,
    pub net: EncoderDecoder,
    pub store: ParamStore,
    exemplar_encoder: EncoderStack,
    fc_exl: Linear,
    pub heads: AuxHeads,
}

impl ExemplarModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let net = EncoderDecoder::build(config, &mut store, &mut rng)?;
        let exemplar_encoder = EncoderStack::new(&mut store, "exemplar_encoder", config, &mut rng)?;
        let n = config.n_emb;
        let fc_exl = Linear::new(&mut store, "fc_exl", 2 * n, n, true, &mut rng)?;
        let heads = AuxHeads::new(&mut store, "aux", n, &mut rng)?;
        if !config.use_exemplars {
            store.set_trainable("exemplar_encoder.", false);
            store.set_trainable("fc_exl.", false);
        }
        Ok(Self { config: config.clone(), net, store, exemplar_encoder, fc_exl, heads })
    }

    pub fn fc_exl(&self) -> &Linear {
        &self.fc_exl
    }

    /// Encodes each exemplar with the exemplar encoder (word embeddings
    /// only), mean-pools over tokens, then averages the pooled vectors.
    pub fn encode_exemplars(&self, tape: &mut Tape, store: &ParamStore, exemplars: &[Vec<usize>]) -> Result<ExemplarEncoding> {
        if exemplars.is_empty() {
            return Err(Error::Contract("no exemplars supplied while exemplars are enabled".into()));
        }
        if exemplars.len() > self.config.q {
            return Err(Error::Contract(format!("{} exemplars exceed q = {}", exemplars.len(), self.config.q)));
        }
        let words = tape.param(store, self.net.word_embedding());
        let mut pooled = Vec::with_capacity(exemplars.len());
        for ids in exemplars {
            if ids.is_empty() {
                return Err(Error::Contract("empty exemplar".into()));
            }
            let x = tape.embedding(words, ids);
            let z = self.exemplar_encoder.forward(tape, store, x, None);
            pooled.push(tape.mean_axis(z, 0));
        }
        let aggregate = mean_of_vectors(tape, &pooled);
        Ok(ExemplarEncoding { pooled, aggregate })
    }

    /// Row `i` of the result is `FC_exl(z_i ⊕ χ)`. Without exemplars the
    /// context encoding passes through untouched.
    pub fn fuse_exemplars(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: EncodedContext,
        exemplars: Option<&ExemplarEncoding>,
    ) -> Result<Var> {
        let Some(x) = exemplars else { return Ok(z.z) };
        let k = tape.shape(z.z)[0];
        let width = tape.shape(z.z)[1];
        let chi_width = tape.value(x.aggregate).len();
        if chi_width != width {
            return Err(Error::shape("fuse_exemplars", format!("context width {width}, exemplar width {chi_width}")));
        }
        let idx = (0..k).flat_map(|_| 0..width).collect();
        let tiled = tape.gather(x.aggregate, idx, vec![k, width]);
        let joined = tape.concat(&[z.z, tiled], 1);
        Ok(self.fc_exl.forward(tape, store, joined))
    }

    /// Builds the decoder memory for a context and its exemplars.
    pub fn memory(&self, tape: &mut Tape, store: &ParamStore, ctx: &ContextIds, exemplars: &[Vec<usize>]) -> Result<Var> {
        let e = self.net.embed_context(tape, store, ctx)?;
        let z = self.net.encode_context(tape, store, e)?;
        let x = if self.config.use_exemplars { Some(self.encode_exemplars(tape, store, exemplars)?) } else { None };
        self.fuse_exemplars(tape, store, z, x.as_ref())
    }

    pub fn forward_with(&self, tape: &mut Tape, store: &ParamStore, ex: &Example) -> Result<Forward> {
        let memory = self.memory(tape, store, &ex.context, &ex.exemplars)?;
        let (output, l_gen) = self.net.decode_teacher_forced(tape, store, memory, &ex.gold)?;
        let aux = self.heads.predict(tape, store, output.hidden);
        Ok(Forward { memory, output, l_gen, aux })
    }

    pub fn forward(&self, tape: &mut Tape, ex: &Example) -> Result<Forward> {
        self.forward_with(tape, &self.store, ex)
    }

    /// Computes the decoder memory as a plain tensor, for generation.
    pub fn memory_tensor(&self, ctx: &ContextIds, exemplars: &[Vec<usize>]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let m = self.memory(&mut tape, &self.store, ctx, exemplars)?;
        Ok(tape.value(m).clone())
    }
}
