use rand::Rng;

use super::layers::Linear;
use crate::error::Result;
use crate::tensor::{softmax, ParamStore, Tape, Tensor, Var};

/// Linear classifiers read off the first decoder state: three 3-way heads
/// (emotional presence, interpretation, exploration) and a scalar sentiment
/// head squashed by tanh.
#[derive(Debug, Clone)]
pub struct AuxHeads {
    pub fc_ep: Linear,
    pub fc_int: Linear,
    pub fc_exp: Linear,
    pub fc_sent: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct AuxVars {
    pub ep_logits: Var,
    pub int_logits: Var,
    pub exp_logits: Var,
    /// tanh output in (-1, 1).
    pub sentiment: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxPrediction {
    pub p_ep: [f64; 3],
    pub p_int: [f64; 3],
    pub p_exp: [f64; 3],
    pub sentiment: f64,
}

impl AuxHeads {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, width: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            fc_ep: Linear::new(store, &format!("{name}.fc_ep"), width, 3, true, rng)?,
            fc_int: Linear::new(store, &format!("{name}.fc_int"), width, 3, true, rng)?,
            fc_exp: Linear::new(store, &format!("{name}.fc_exp"), width, 3, true, rng)?,
            fc_sent: Linear::new(store, &format!("{name}.fc_sent"), width, 1, true, rng)?,
        })
    }

    pub fn predict(&self, tape: &mut Tape, store: &ParamStore, hidden: Var) -> AuxVars {
        let first = tape.narrow(hidden, 0, 0, 1);
        let ep_logits = self.fc_ep.forward(tape, store, first);
        let int_logits = self.fc_int.forward(tape, store, first);
        let exp_logits = self.fc_exp.forward(tape, store, first);
        let s = self.fc_sent.forward(tape, store, first);
        let sentiment = tape.tanh(s);
        AuxVars { ep_logits, int_logits, exp_logits, sentiment }
    }
}

fn probs3(t: &Tensor) -> [f64; 3] {
    let p = softmax(t, t.rank().max(1) - 1).expect("3-way logits");
    [p.data()[0], p.data()[1], p.data()[2]]
}

impl AuxVars {
    pub fn prediction(&self, tape: &Tape) -> AuxPrediction {
        AuxPrediction {
            p_ep: probs3(tape.value(self.ep_logits)),
            p_int: probs3(tape.value(self.int_logits)),
            p_exp: probs3(tape.value(self.exp_logits)),
            sentiment: tape.value(self.sentiment).item(),
        }
    }
}
