//! Conditional models `P(E | F)`: encoder-decoders with forward, reverse or
//! bidirectional encoders, optional attention, and probability-averaging
//! ensembles.

mod attention;
mod ensemble;
mod model;

pub use attention::{AttentionKind, ATTN_HIDDEN_DEFAULT};
pub use ensemble::Ensemble;
pub use model::{
    BridgeKind, DecState, EncDecConfig, EncDecModel, EncoderKind, Encoding, StepOutput,
};
