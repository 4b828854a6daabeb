//! Sequence models for language modeling and translation: count-based and
//! log-linear n-gram models, feed-forward and recurrent neural LMs, and
//! attentional encoder-decoders, all on top of a small reverse-mode
//! autodiff engine. Decoding (sampling, greedy, beam) and evaluation
//! (perplexity, BLEU) work over any of them.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod loglinear;
pub mod model_file;
pub mod neural_lm;
pub mod ngram;
pub mod search;
pub mod seq2seq;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
