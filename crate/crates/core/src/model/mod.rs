//! The generative network: context and exemplar encoders, fusion,
//! causal decoder, and the auxiliary empathy heads.

mod config;
mod generate;
mod heads;
mod layers;
mod relpos;
mod seq2seq;

pub use config::{ModelConfig, NormKind};
pub use generate::{generate, DecodeMode};
pub use heads::{AuxHeads, AuxPrediction, AuxVars};
pub use layers::{Attention, EncoderStack, FeedForward, Linear, Norm};
pub use relpos::relative_position_bucket;
pub use seq2seq::{
    teacher_forcing, BaseModel, ContextEmbedding, ContextIds, DecoderOutput, EncodedContext, EncoderDecoder,
    Example, ExemplarEncoding, ExemplarModel, Forward, mean_of_vectors,
};
