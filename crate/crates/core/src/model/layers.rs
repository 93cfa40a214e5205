use rand::Rng;

use super::config::{ModelConfig, NormKind};
use super::relpos::bucket_matrix;
use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, bias: bool, rng: &mut R) -> Result<Self> {
        let w = store.add_uniform(format!("{name}.w"), &[n_in, n_out], n_in, rng)?;
        let b = if bias { Some(store.add_uniform(format!("{name}.b"), &[n_out], n_in, rng)?) } else { None };
        Ok(Self { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    gain: ParamId,
    bias: Option<ParamId>,
    kind: NormKind,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, kind: NormKind) -> Result<Self> {
        let gain = store.add_filled(format!("{name}.gain"), &[width], 1.0)?;
        let bias = match kind {
            NormKind::Layer => Some(store.add_filled(format!("{name}.bias"), &[width], 0.0)?),
            NormKind::Rms => None,
        };
        Ok(Self { gain, bias, kind })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gain);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.norm(x, g, b, self.kind == NormKind::Layer, NORM_EPS)
    }
}

/// Multi-head attention without projection biases.
#[derive(Debug, Clone)]
pub struct Attention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    n_heads: usize,
    head_dim: usize,
}

impl Attention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let n = cfg.n_emb;
        Ok(Self {
            wq: store.add_uniform(format!("{name}.wq"), &[n, n], n, rng)?,
            wk: store.add_uniform(format!("{name}.wk"), &[n, n], n, rng)?,
            wv: store.add_uniform(format!("{name}.wv"), &[n, n], n, rng)?,
            wo: store.add_uniform(format!("{name}.wo"), &[n, n], n, rng)?,
            n_heads: cfg.n_heads,
            head_dim: cfg.head_dim(),
        })
    }

    /// `bias` holds one `q_len × k_len` position-bias map per head.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        bias: Option<&[Var]>,
        causal: bool,
    ) -> Var {
        let (wq, wk, wv, wo) = (
            tape.param(store, self.wq),
            tape.param(store, self.wk),
            tape.param(store, self.wv),
            tape.param(store, self.wo),
        );
        let q = tape.matmul(queries, wq);
        let k = tape.matmul(keys, wk);
        let v = tape.matmul(keys, wv);
        let q_len = tape.shape(q)[0];
        let k_len = tape.shape(k)[0];
        let mask: Option<Vec<bool>> = causal
            .then(|| (0..q_len).flat_map(|i| (0..k_len).map(move |j| j > i)).collect());
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.narrow(q, 1, h * self.head_dim, self.head_dim);
            let kh = tape.narrow(k, 1, h * self.head_dim, self.head_dim);
            let vh = tape.narrow(v, 1, h * self.head_dim, self.head_dim);
            let raw = tape.matmul_t(qh, false, kh, true);
            let mut scores = tape.scale(raw, scale);
            if let Some(b) = bias {
                scores = tape.add(scores, b[h]);
            }
            if let Some(m) = &mask {
                scores = tape.masked_fill(scores, m.clone(), -1e30);
            }
            let attn = tape.softmax(scores, 1);
            heads.push(tape.matmul(attn, vh));
        }
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1) };
        tape.matmul(joined, wo)
    }
}

/// Learned per-head bias indexed by relative-position bucket.
#[derive(Debug, Clone)]
pub struct RelativeBias {
    table: ParamId,
    n_heads: usize,
    n_buckets: usize,
    max_distance: usize,
    bidirectional: bool,
}

impl RelativeBias {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, bidirectional: bool, rng: &mut R) -> Result<Self> {
        Ok(Self {
            table: store.add_uniform(format!("{name}.rel_bias"), &[cfg.rel_pos_buckets, cfg.n_heads], cfg.rel_pos_buckets, rng)?,
            n_heads: cfg.n_heads,
            n_buckets: cfg.rel_pos_buckets,
            max_distance: cfg.rel_pos_max_distance,
            bidirectional,
        })
    }

    pub fn maps(&self, tape: &mut Tape, store: &ParamStore, q_len: usize, k_len: usize) -> Vec<Var> {
        let table = tape.param(store, self.table);
        let buckets = bucket_matrix(q_len, k_len, self.n_buckets, self.max_distance, self.bidirectional);
        (0..self.n_heads)
            .map(|h| {
                let idx = buckets.iter().map(|b| b * self.n_heads + h).collect();
                tape.gather(table, idx, vec![q_len, k_len])
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    w_in: ParamId,
    w_out: ParamId,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_in: store.add_uniform(format!("{name}.w_in"), &[cfg.n_emb, cfg.ffn_width], cfg.n_emb, rng)?,
            w_out: store.add_uniform(format!("{name}.w_out"), &[cfg.ffn_width, cfg.n_emb], cfg.ffn_width, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w_in = tape.param(store, self.w_in);
        let w_out = tape.param(store, self.w_out);
        let h = tape.matmul(x, w_in);
        let h = tape.relu(h);
        tape.matmul(h, w_out)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    norm_attn: Norm,
    attn: Attention,
    norm_ffn: Norm,
    ffn: FeedForward,
}

/// Pre-norm transformer encoder with bidirectional relative-position bias.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    layers: Vec<EncoderLayer>,
    bias: RelativeBias,
    final_norm: Norm,
    dropout: f64,
}

impl EncoderStack {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let bias = RelativeBias::new(store, name, cfg, true, rng)?;
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("{name}.block{i}");
                Ok(EncoderLayer {
                    norm_attn: Norm::new(store, &format!("{p}.attn_norm"), cfg.n_emb, cfg.norm)?,
                    attn: Attention::new(store, &format!("{p}.attn"), cfg, rng)?,
                    norm_ffn: Norm::new(store, &format!("{p}.ffn_norm"), cfg.n_emb, cfg.norm)?,
                    ffn: FeedForward::new(store, &format!("{p}.ffn"), cfg, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        let final_norm = Norm::new(store, &format!("{name}.final_norm"), cfg.n_emb, cfg.norm)?;
        Ok(Self { layers, bias, final_norm, dropout: cfg.dropout })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, rng: Option<&mut dyn rand::RngCore>) -> Var {
        let len = tape.shape(x)[0];
        let bias = self.bias.maps(tape, store, len, len);
        let mut rng = rng;
        let mut h = x;
        for l in &self.layers {
            let n = l.norm_attn.forward(tape, store, h);
            let a = l.attn.forward(tape, store, n, n, Some(&bias), false);
            let a = drop(tape, a, self.dropout, &mut rng);
            h = tape.add(h, a);
            let n = l.norm_ffn.forward(tape, store, h);
            let f = l.ffn.forward(tape, store, n);
            let f = drop(tape, f, self.dropout, &mut rng);
            h = tape.add(h, f);
        }
        self.final_norm.forward(tape, store, h)
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    norm_self: Norm,
    self_attn: Attention,
    norm_cross: Norm,
    cross_attn: Attention,
    norm_ffn: Norm,
    ffn: FeedForward,
}

/// Pre-norm causal decoder with cross-attention over an encoder memory.
#[derive(Debug, Clone)]
pub struct DecoderStack {
    layers: Vec<DecoderLayer>,
    bias: RelativeBias,
    final_norm: Norm,
    dropout: f64,
}

impl DecoderStack {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let bias = RelativeBias::new(store, name, cfg, false, rng)?;
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("{name}.block{i}");
                Ok(DecoderLayer {
                    norm_self: Norm::new(store, &format!("{p}.self_norm"), cfg.n_emb, cfg.norm)?,
                    self_attn: Attention::new(store, &format!("{p}.self_attn"), cfg, rng)?,
                    norm_cross: Norm::new(store, &format!("{p}.cross_norm"), cfg.n_emb, cfg.norm)?,
                    cross_attn: Attention::new(store, &format!("{p}.cross_attn"), cfg, rng)?,
                    norm_ffn: Norm::new(store, &format!("{p}.ffn_norm"), cfg.n_emb, cfg.norm)?,
                    ffn: FeedForward::new(store, &format!("{p}.ffn"), cfg, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        let final_norm = Norm::new(store, &format!("{name}.final_norm"), cfg.n_emb, cfg.norm)?;
        Ok(Self { layers, bias, final_norm, dropout: cfg.dropout })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        memory: Var,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Var {
        let len = tape.shape(x)[0];
        let bias = self.bias.maps(tape, store, len, len);
        let mut rng = rng;
        let mut h = x;
        for l in &self.layers {
            let n = l.norm_self.forward(tape, store, h);
            let a = l.self_attn.forward(tape, store, n, n, Some(&bias), true);
            let a = drop(tape, a, self.dropout, &mut rng);
            h = tape.add(h, a);
            let n = l.norm_cross.forward(tape, store, h);
            let c = l.cross_attn.forward(tape, store, n, memory, None, false);
            let c = drop(tape, c, self.dropout, &mut rng);
            h = tape.add(h, c);
            let n = l.norm_ffn.forward(tape, store, h);
            let f = l.ffn.forward(tape, store, n);
            let f = drop(tape, f, self.dropout, &mut rng);
            h = tape.add(h, f);
        }
        self.final_norm.forward(tape, store, h)
    }
}

fn drop(tape: &mut Tape, x: Var, p: f64, rng: &mut Option<&mut dyn rand::RngCore>) -> Var {
    match rng {
        Some(r) if p > 0.0 => tape.dropout(x, p, r),
        _ => x,
    }
}
