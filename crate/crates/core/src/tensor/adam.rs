use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// Bias-corrected Adam moments for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        Self { config, step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter, then clears all
    /// gradient buffers.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.first_moment.len() != store.len() {
            return Err(Error::Contract("optimizer state does not match parameter store".into()));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, epsilon: eps } = self.config;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (id, p) in store.iter_mut() {
            let grad = p.grad.take();
            if !p.trainable {
                continue;
            }
            let g = grad.expect("checked above");
            let m = &mut self.first_moment[id.index()];
            let v = &mut self.second_moment[id.index()];
            for (((w, gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![w])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::vector(vec![0.3, -1.2, 4.0])).unwrap();
        let before = s.clone();
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &s);
        for _ in 0..5 {
            s.get_mut(s.id("a").unwrap()).grad = Some(vec![0.0; 3]);
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.get(s.id("a").unwrap()).tensor, before.get(before.id("a").unwrap()).tensor);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &s);
        s.get_mut(s.id("w").unwrap()).grad = Some(vec![1.0]);
        adam.step(&mut s).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction
        let w = s.get(s.id("w").unwrap()).tensor.data()[0];
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!(s.get(s.id("w").unwrap()).grad.is_none());
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut s = scalar_store(0.0);
        let id = s.id("w").unwrap();
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &s);
        for _ in 0..200 {
            let mut tape = Tape::new();
            let w = tape.param(&s, id);
            let loss = tape.mse(w, 3.0);
            let g = tape.backward(loss).unwrap();
            s.accumulate(&tape, &g, 1.0).unwrap();
            adam.step(&mut s).unwrap();
        }
        let w = s.get(id).tensor.data()[0];
        assert!((w - 3.0).abs() < 0.1, "w = {w}");
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        assert!(matches!(adam.step(&mut s), Err(Error::MissingGradient(n)) if n == "w"));
    }
}
