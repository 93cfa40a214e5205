//! Exemplar-guided empathetic response generation at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! dialogue data model ([`corpus`]), the exemplar-conditioned
//! encoder-decoder ([`model`]), a dense bi-encoder retriever
//! ([`retriever`]), synthetic empathy supervision ([`signals`]), evaluation
//! measures ([`metrics`]) and the experiment harness ([`harness`]).

pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod retriever;
pub mod signals;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
pub use tensor::{AdamConfig, AdamState, ParamId, ParamStore, Tape, Tensor, Var};
