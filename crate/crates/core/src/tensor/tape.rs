//! Wengert tape: every forward op appends a node holding its value and the
//! inputs it needs for the vector-Jacobian product; `backward` replays the
//! nodes in reverse.
//!
//! Shape mismatches inside the tape are programming errors and panic. The
//! data-dependent failure modes (non-finite values, empty losses) surface as
//! [`Error`]s.

use std::collections::HashMap;

use rand::Rng;

use super::kernels::gemm;
use super::param::{ParamId, ParamStore};
use super::{axis_split, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, a_t: bool, b_t: bool, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, row: Var },
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    MeanAxis { x: Var, axis: usize },
    Sum(Var),
    Embedding { table: Var, ids: Vec<usize> },
    Gather { x: Var, idx: Vec<usize> },
    Norm { x: Var, gain: Var, bias: Option<Var>, center: bool, inv: Vec<f64>, xhat: Vec<f64> },
    MaskedFill { x: Var, mask: Vec<bool> },
    Transpose(Var),
    Reshape(Var),
    Dropout { x: Var, keep: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, ignore: usize, probs: Vec<f64>, count: usize },
    Mse { pred: Var, target: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow { .. } => "add_row",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Sum(..) => "sum",
            Op::Embedding { .. } => "embedding",
            Op::Gather { .. } => "gather",
            Op::Norm { .. } => "norm",
            Op::MaskedFill { .. } => "masked_fill",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Dropout { .. } => "dropout",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation tape. Single-threaded; build one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    nonfinite: Option<(usize, &'static str)>,
}

/// Gradient buffers indexed by [`Var`], produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Parameters bound to this tape, with the node each one lives on.
    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().map(|(&p, &v)| (p, v))
    }

    /// First node whose forward value was NaN or infinite, if any.
    pub fn first_nonfinite(&self) -> Option<(usize, &'static str)> {
        self.nonfinite
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let id = self.nodes.len();
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some((id, op.name()));
        }
        self.nodes.push(Node { value, op });
        Var(id)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Binds a parameter onto the tape. Repeated binds of the same id return
    /// the same node so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).tensor.clone(), Op::Param);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `a' · b'`, where each operand is optionally transposed (2-D only).
    pub fn matmul_t(&mut self, a: Var, a_t: bool, b: Var, b_t: bool) -> Var {
        let (ar, ac) = self.value(a).dims2();
        let (br, bc) = self.value(b).dims2();
        let (m, k) = if a_t { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if b_t { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), a_t, self.data(b), b_t, 0.0, &mut out);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, a_t, b_t, m, k, n })
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "{} operand shapes", op.name());
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (_, c) = self.value(x).dims2();
        assert_eq!(self.value(row).len(), c, "add_row width");
        let r = self.data(row);
        let data = self
            .data(x)
            .chunks(c)
            .flat_map(|xs| xs.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::AddRow { x, row })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let data = self.data(x).iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Scale(x, s))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Relu(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let t = super::ops::softmax(self.value(x), axis).expect("softmax axis");
        self.push(t, Op::Softmax { x, axis })
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Var {
        let t = super::ops::log_softmax(self.value(x), axis).expect("log_softmax axis");
        self.push(t, Op::LogSoftmax { x, axis })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = self.shape(parts[0]).to_vec();
        assert!(axis < first.len(), "concat axis {axis} for rank {}", first.len());
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s.len(), first.len(), "concat ranks");
            for (d, (&a, &b)) in s.iter().zip(&first).enumerate() {
                assert!(d == axis || a == b, "concat shapes {s:?} vs {first:?}");
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.data(p)[o * len..(o + 1) * len]);
            }
        }
        self.push(Tensor::from_parts(shape, data), Op::Concat { parts: parts.to_vec(), axis })
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let src = self.shape(x).to_vec();
        assert!(start + len <= src[axis], "narrow out of range");
        let (outer, alen, inner) = axis_split(&src, axis);
        let mut shape = src.clone();
        shape[axis] = len;
        let d = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            data.extend_from_slice(&d[base..base + len * inner]);
        }
        self.push(Tensor::from_parts(shape, data), Op::Narrow { x, axis, start })
    }

    /// Mean along `axis`, keeping that axis with length 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        let src = self.shape(x).to_vec();
        assert!(axis < src.len(), "mean axis {axis} for rank {}", src.len());
        let (outer, alen, inner) = axis_split(&src, axis);
        assert!(alen > 0, "mean over empty axis");
        let d = self.data(x);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..alen {
                let base = (o * alen + a) * inner;
                for i in 0..inner {
                    data[o * inner + i] += d[base + i];
                }
            }
        }
        data.iter_mut().for_each(|v| *v /= alen as f64);
        let mut shape = src;
        shape[axis] = 1;
        self.push(Tensor::from_parts(shape, data), Op::MeanAxis { x, axis })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Row lookup into a `V×d` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = self.value(table).dims2();
        let t = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embedding id {id} out of range {v}");
            data.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        self.push(
            Tensor::from_parts(vec![ids.len(), d], data),
            Op::Embedding { table, ids: ids.to_vec() },
        )
    }

    /// Picks flat elements of `x` into a tensor of `shape`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, shape: Vec<usize>) -> Var {
        assert_eq!(idx.len(), shape.iter().product::<usize>(), "gather shape");
        let d = self.data(x);
        let data = idx.iter().map(|&i| d[i]).collect();
        self.push(Tensor::from_parts(shape, data), Op::Gather { x, idx })
    }

    /// Normalization over the last axis with a learned gain. `center` selects
    /// standard layer normalization; otherwise root-mean-square scaling only.
    pub fn norm(&mut self, x: Var, gain: Var, bias: Option<Var>, center: bool, eps: f64) -> Var {
        let (r, c) = self.value(x).dims2();
        assert_eq!(self.value(gain).len(), c, "norm gain width");
        let g = self.data(gain);
        let b = bias.map(|b| self.data(b));
        let d = self.data(x);
        let mut xhat = vec![0.0; r * c];
        let mut inv = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &d[i * c..(i + 1) * c];
            let mu = if center { row.iter().sum::<f64>() / c as f64 } else { 0.0 };
            let ms = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let iv = 1.0 / (ms + eps).sqrt();
            inv[i] = iv;
            for j in 0..c {
                let h = (row[j] - mu) * iv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b.map_or(0.0, |b| b[j]);
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::Norm { x, gain, bias, center, inv, xhat },
        )
    }

    /// Replaces entries where `mask` is true with `value`; those entries pass
    /// no gradient.
    pub fn masked_fill(&mut self, x: Var, mask: Vec<bool>, value: f64) -> Var {
        assert_eq!(mask.len(), self.value(x).len(), "mask length");
        let data = self
            .data(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::MaskedFill { x, mask })
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).dims2();
        let d = self.data(x);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = d[i * c + j];
            }
        }
        self.push(Tensor::from_parts(vec![c, r], data), Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), self.value(x).len(), "reshape size");
        let data = self.data(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Reshape(x))
    }

    /// Inverted dropout with drop probability `p`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
            .collect();
        let data = self.data(x).iter().zip(&keep).map(|(a, k)| a * k).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Dropout { x, keep })
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (t×|V|), skipping positions equal to `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let (t, v) = self.value(logits).dims2();
        if targets.len() != t {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {t} rows", targets.len()),
            ));
        }
        let probs = super::ops::softmax(self.value(logits), self.value(logits).rank().max(1) - 1)?
            .into_data();
        let logp = super::ops::log_softmax(self.value(logits), self.value(logits).rank().max(1) - 1)?;
        let mut total = 0.0;
        let mut count = 0;
        for (i, &tg) in targets.iter().enumerate() {
            if tg == ignore {
                continue;
            }
            if tg >= v {
                return Err(Error::Contract(format!("target {tg} outside vocabulary {v}")));
            }
            total -= logp.data()[i * v + tg];
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::CrossEntropy { logits, targets: targets.to_vec(), ignore, probs, count },
        ))
    }

    /// Squared error between a single-element prediction and a target.
    pub fn mse(&mut self, pred: Var, target: f64) -> Var {
        assert_eq!(self.value(pred).len(), 1, "mse expects a scalar prediction");
        let d = self.data(pred)[0] - target;
        self.push(Tensor::scalar(d * d), Op::Mse { pred, target })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if let Some((node, op)) = self.nonfinite {
            if node <= loss.0 {
                return Err(Error::NonFinite { op, node });
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul { a, b, a_t, b_t, m, k, n } => {
                // out = A'·B'; dA' = G·B'ᵀ, dB' = A'ᵀ·G
                let ga = slot(grads, a, m * k);
                if a_t {
                    // A is k×m, dA = B'·Gᵀ
                    gemm(k, n, m, self.data(b), b_t, g, true, 1.0, ga);
                } else {
                    gemm(m, n, k, g, false, self.data(b), !b_t, 1.0, ga);
                }
                let gb = slot(grads, b, k * n);
                if b_t {
                    // B is n×k, dB = Gᵀ·A'
                    gemm(n, m, k, g, true, self.data(a), a_t, 1.0, gb);
                } else {
                    gemm(k, m, n, self.data(a), !a_t, g, false, 1.0, gb);
                }
            }
            &Op::Add(a, b) => {
                axpy(slot(grads, a, g.len()), 1.0, g);
                axpy(slot(grads, b, g.len()), 1.0, g);
            }
            &Op::Sub(a, b) => {
                axpy(slot(grads, a, g.len()), 1.0, g);
                axpy(slot(grads, b, g.len()), -1.0, g);
            }
            &Op::Mul(a, b) => {
                let (da, db) = (self.data(a), self.data(b));
                let ga = slot(grads, a, g.len());
                for ((s, gi), y) in ga.iter_mut().zip(g).zip(db) {
                    *s += gi * y;
                }
                let gb = slot(grads, b, g.len());
                for ((s, gi), x) in gb.iter_mut().zip(g).zip(da) {
                    *s += gi * x;
                }
            }
            &Op::AddRow { x, row } => {
                axpy(slot(grads, x, g.len()), 1.0, g);
                let c = self.value(row).len();
                let gr = slot(grads, row, c);
                for chunk in g.chunks(c) {
                    axpy(gr, 1.0, chunk);
                }
            }
            &Op::Scale(x, s) => axpy(slot(grads, x, g.len()), s, g),
            &Op::Tanh(x) => {
                let y = node.value.data();
                let gx = slot(grads, x, g.len());
                for ((s, gi), yi) in gx.iter_mut().zip(g).zip(y) {
                    *s += gi * (1.0 - yi * yi);
                }
            }
            &Op::Relu(x) => {
                let xd = self.data(x);
                let gx = slot(grads, x, g.len());
                for ((s, gi), xi) in gx.iter_mut().zip(g).zip(xd) {
                    if *xi > 0.0 {
                        *s += gi;
                    }
                }
            }
            &Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, alen, inner) = axis_split(node.value.shape(), axis);
                let gx = slot(grads, x, g.len());
                for o in 0..outer {
                    for inn in 0..inner {
                        let at = |a: usize| (o * alen + a) * inner + inn;
                        let dot: f64 = (0..alen).map(|a| g[at(a)] * y[at(a)]).sum();
                        for a in 0..alen {
                            gx[at(a)] += y[at(a)] * (g[at(a)] - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmax { x, axis } => {
                let y = node.value.data();
                let (outer, alen, inner) = axis_split(node.value.shape(), axis);
                let gx = slot(grads, x, g.len());
                for o in 0..outer {
                    for inn in 0..inner {
                        let at = |a: usize| (o * alen + a) * inner + inn;
                        let gs: f64 = (0..alen).map(|a| g[at(a)]).sum();
                        for a in 0..alen {
                            gx[at(a)] += g[at(a)] - y[at(a)].exp() * gs;
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                let row = node.value.shape()[*axis] * inner;
                for &p in parts {
                    let len = self.shape(p)[*axis] * inner;
                    let gp = slot(grads, p, outer * len);
                    for o in 0..outer {
                        axpy(&mut gp[o * len..(o + 1) * len], 1.0, &g[o * row + offset..o * row + offset + len]);
                    }
                    offset += len;
                }
            }
            &Op::Narrow { x, axis, start } => {
                let src = self.shape(x);
                let (outer, alen, inner) = axis_split(src, axis);
                let len = node.value.shape()[axis];
                let gx = slot(grads, x, outer * alen * inner);
                for o in 0..outer {
                    let base = o * alen * inner + start * inner;
                    axpy(&mut gx[base..base + len * inner], 1.0, &g[o * len * inner..(o + 1) * len * inner]);
                }
            }
            &Op::MeanAxis { x, axis } => {
                let (outer, alen, inner) = axis_split(self.shape(x), axis);
                let gx = slot(grads, x, outer * alen * inner);
                let w = 1.0 / alen as f64;
                for o in 0..outer {
                    for a in 0..alen {
                        let base = (o * alen + a) * inner;
                        for k in 0..inner {
                            gx[base + k] += g[o * inner + k] * w;
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                let n = self.value(x).len();
                slot(grads, x, n).iter_mut().for_each(|s| *s += g[0]);
            }
            Op::Embedding { table, ids } => {
                let (v, d) = self.value(*table).dims2();
                let gt = slot(grads, *table, v * d);
                for (r, &id) in ids.iter().enumerate() {
                    axpy(&mut gt[id * d..(id + 1) * d], 1.0, &g[r * d..(r + 1) * d]);
                }
            }
            Op::Gather { x, idx } => {
                let n = self.value(*x).len();
                let gx = slot(grads, *x, n);
                for (gi, &k) in g.iter().zip(idx) {
                    gx[k] += gi;
                }
            }
            Op::Norm { x, gain, bias, center, inv, xhat } => {
                let (r, c) = node.value.dims2();
                let gw = self.data(*gain);
                let mut dxhat = vec![0.0; c];
                {
                    let gg = slot(grads, *gain, c);
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if let Some(b) = bias {
                    let gb = slot(grads, *b, c);
                    for chunk in g.chunks(c) {
                        axpy(gb, 1.0, chunk);
                    }
                }
                let gx = slot(grads, *x, r * c);
                for i in 0..r {
                    let xh = &xhat[i * c..(i + 1) * c];
                    for j in 0..c {
                        dxhat[j] = g[i * c + j] * gw[j];
                    }
                    let proj = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    let mean = if *center { dxhat.iter().sum::<f64>() / c as f64 } else { 0.0 };
                    for j in 0..c {
                        gx[i * c + j] += inv[i] * (dxhat[j] - mean - xh[j] * proj);
                    }
                }
            }
            Op::MaskedFill { x, mask } => {
                let gx = slot(grads, *x, g.len());
                for ((s, gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                    if !m {
                        *s += gi;
                    }
                }
            }
            &Op::Transpose(x) => {
                let (r, c) = self.value(x).dims2();
                let gx = slot(grads, x, r * c);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j * r + i];
                    }
                }
            }
            &Op::Reshape(x) => axpy(slot(grads, x, g.len()), 1.0, g),
            Op::Dropout { x, keep } => {
                let gx = slot(grads, *x, g.len());
                for ((s, gi), k) in gx.iter_mut().zip(g).zip(keep) {
                    *s += gi * k;
                }
            }
            Op::CrossEntropy { logits, targets, ignore, probs, count } => {
                let (_, v) = self.value(*logits).dims2();
                let w = g[0] / *count as f64;
                let gl = slot(grads, *logits, probs.len());
                for (i, &tg) in targets.iter().enumerate() {
                    if tg == *ignore {
                        continue;
                    }
                    let row = &mut gl[i * v..(i + 1) * v];
                    for (s, p) in row.iter_mut().zip(&probs[i * v..(i + 1) * v]) {
                        *s += w * p;
                    }
                    row[tg] -= w;
                }
            }
            &Op::Mse { pred, target } => {
                let d = self.data(pred)[0] - target;
                slot(grads, pred, 1)[0] += 2.0 * d * g[0];
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::vector(vec![0.5, -1.0, 2.0]));
        let s = tape.sum(w);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_doubles() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::vector(vec![2.0, -3.0]));
        let sq = tape.mul(w, w);
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[4.0, -6.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.3, -0.7]));
        let a = tape.tanh(x);
        let b = tape.tanh(x);
        let both = tape.add(a, b);
        let s = tape.sum(both);
        let g2 = tape.backward(s).unwrap().wrt(x).unwrap().to_vec();

        let mut single = Tape::new();
        let x1 = single.constant(Tensor::vector(vec![0.3, -0.7]));
        let a1 = single.tanh(x1);
        let s1 = single.sum(a1);
        let g1 = single.backward(s1).unwrap().wrt(x1).unwrap().to_vec();
        for (two, one) in g2.iter().zip(&g1) {
            assert!((two - 2.0 * one).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.tanh(x);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn nonfinite_forward_blocks_backward() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![f64::MAX, f64::MAX]));
        let y = tape.add(x, x);
        let s = tape.sum(y);
        assert!(matches!(tape.backward(s), Err(Error::NonFinite { op: "add", .. })));
    }

    #[test]
    fn cross_entropy_all_ignored_is_empty_loss() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        assert!(matches!(tape.cross_entropy(l, &[0, 0], 0), Err(Error::EmptyLoss)));
    }

    #[test]
    fn masked_entries_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let m = tape.masked_fill(x, vec![false, true, false], -1e30);
        let sm = tape.softmax(m, 0);
        let pick = tape.narrow(sm, 0, 0, 1);
        let s = tape.sum(pick);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap()[1], 0.0);
        assert!(tape.value(sm).data()[1] == 0.0);
    }
}
