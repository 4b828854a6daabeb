//! Tensor computation graphs with reverse-mode differentiation, plus optimizers.

mod graph;
mod optim;
mod params;

pub use graph::{sigmoid, Graph, NodeId, Op};
pub use optim::{clip_gradients, Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{Gradients, ParamId, ParamSet};
