//! Attention, encoder/decoder stacks, the recurrent baseline and caption
//! generation.

mod attention;
mod generate;
mod layers;
mod recurrent;

pub use attention::{causal_mask, MultiHeadAttention};
pub use generate::{beam_search, generate, greedy, log_softmax, CaptionState, DecodeOptions, StepScorer};
pub use layers::{sinusoidal_encoding, Decoder, DecoderLayer, Encoder, EncoderLayer, FeedForward};
pub use recurrent::GruDecoder;

use crate::error::Result;
use crate::nn::Session;
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Row-stochastic next-word distribution from decoder logits `T x V`.
pub fn word_distribution<T: Scalar>(s: &mut Session<'_, T>, logits: Var) -> Result<Var> {
    s.tape.softmax(logits, 1)
}
