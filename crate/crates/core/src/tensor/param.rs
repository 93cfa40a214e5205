use std::collections::HashMap;

use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Option<Vec<f64>>,
    pub trainable: bool,
}

/// Owns every weight of a model, addressed by [`ParamId`] or by dotted name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, tensor, grad: None, trainable: true });
        Ok(id)
    }

    /// Adds a parameter drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn add_filled(&mut self, name: impl Into<String>, shape: &[usize], v: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, Tensor::from_parts(shape.to_vec(), vec![v; n]))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    /// Adds `scale * grad` from a finished backward pass into the stored
    /// gradient buffers of every parameter bound on `tape`.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients, scale: f64) -> Result<()> {
        let mut bound: Vec<_> = tape.bound_params().collect();
        bound.sort_by_key(|(p, _)| *p);
        for (pid, var) in bound {
            let Some(g) = grads.wrt(var) else { continue };
            let p = &mut self.params[pid.0];
            if g.iter().any(|v| !(scale * v).is_finite()) {
                return Err(Error::NanGradient(p.name.clone()));
            }
            let buf = p.grad.get_or_insert_with(|| vec![0.0; g.len()]);
            for (b, gi) in buf.iter_mut().zip(g) {
                *b += scale * gi;
            }
        }
        Ok(())
    }

    /// Adds another store's gradient buffers into this one (same layout).
    pub fn merge_grads(&mut self, other: &GradBuffer) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                let buf = self.params[i].grad.get_or_insert_with(|| vec![0.0; g.len()]);
                for (b, gi) in buf.iter_mut().zip(g) {
                    *b += gi;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Copies weights from `other`, which must have the same layout.
    pub fn copy_weights_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Contract("parameter layouts differ".into()));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.tensor.shape() != src.tensor.shape() {
                return Err(Error::Contract(format!("parameter `{}` layout differs", dst.name)));
            }
            dst.tensor = src.tensor.clone();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }
}

/// Gradient buffers detached from a store, used to sum per-example
/// gradients computed on separate tapes.
#[derive(Debug, Clone, Default)]
pub struct GradBuffer {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradBuffer {
    pub fn new(n_params: usize) -> Self {
        Self { grads: vec![None; n_params] }
    }

    pub fn accumulate(&mut self, store: &ParamStore, tape: &Tape, grads: &Gradients, scale: f64) -> Result<()> {
        let mut bound: Vec<_> = tape.bound_params().collect();
        bound.sort_by_key(|(p, _)| *p);
        for (pid, var) in bound {
            let Some(g) = grads.wrt(var) else { continue };
            if g.iter().any(|v| !(scale * v).is_finite()) {
                return Err(Error::NanGradient(store.get(pid).name.clone()));
            }
            let buf = self.grads[pid.0].get_or_insert_with(|| vec![0.0; g.len()]);
            for (b, gi) in buf.iter_mut().zip(g) {
                *b += scale * gi;
            }
        }
        Ok(())
    }

    pub fn add(&mut self, other: &GradBuffer) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                let buf = mine.get_or_insert_with(|| vec![0.0; t.len()]);
                for (b, gi) in buf.iter_mut().zip(t) {
                    *b += gi;
                }
            }
        }
    }
}

/// Per-example losses and their gradients summed with weight `scale`.
///
/// Every example runs on its own tape, possibly in parallel; the buffers are
/// added in example order, so the result is independent of thread count.
pub fn batch_gradients<T, F>(store: &ParamStore, items: &[T], scale: f64, f: F) -> Result<(Vec<f64>, GradBuffer)>
where
    T: Sync,
    F: Fn(&mut Tape, &T) -> Result<Var> + Sync,
{
    let (out, buf) = batch_gradients_with(store, items, scale, |tape, item| Ok((f(tape, item)?, ())))?;
    Ok((out.into_iter().map(|(l, _)| l).collect(), buf))
}

/// Like [`batch_gradients`], also returning a per-example extra read off the
/// tape (loss components, predictions, ...).
pub fn batch_gradients_with<T, E, F>(
    store: &ParamStore,
    items: &[T],
    scale: f64,
    f: F,
) -> Result<(Vec<(f64, E)>, GradBuffer)>
where
    T: Sync,
    E: Send,
    F: Fn(&mut Tape, &T) -> Result<(Var, E)> + Sync,
{
    use rayon::prelude::*;
    let per_item: Vec<Result<(f64, E, GradBuffer)>> = items
        .par_iter()
        .map(|item| {
            let mut tape = Tape::new();
            let (loss, extra) = f(&mut tape, item)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                // skip backward; the caller decides what a non-finite loss means
                return Ok((value, extra, GradBuffer::new(store.len())));
            }
            let grads = tape.backward(loss)?;
            let mut buf = GradBuffer::new(store.len());
            buf.accumulate(store, &tape, &grads, scale)?;
            Ok((value, extra, buf))
        })
        .collect();
    let mut out = Vec::with_capacity(items.len());
    let mut total = GradBuffer::new(store.len());
    for r in per_item {
        let (l, e, buf) = r?;
        out.push((l, e));
        total.add(&buf);
    }
    Ok((out, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::new();
        s.add_filled("a.w", &[2], 0.0).unwrap();
        assert!(s.add_filled("a.w", &[2], 0.0).is_err());
        assert_eq!(s.id("a.w"), Some(ParamId(0)));
    }

    #[test]
    fn accumulate_reports_nan_by_name() {
        let mut s = ParamStore::new();
        let id = s.add_filled("enc.w", &[1], -1.0).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&s, id);
        let sq = tape.mul(w, w);
        let grads = tape.backward(sq).unwrap();
        let err = s.accumulate(&tape, &grads, f64::NAN).unwrap_err();
        assert!(matches!(err, Error::NanGradient(name) if name == "enc.w"));
    }
}
