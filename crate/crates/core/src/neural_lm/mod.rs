//! Neural language models: a feed-forward n-gram model, recurrent LMs over
//! any [`CellKind`], and the two-input MLP toy task. All train through the
//! shared epoch loop in [`train_units`].

pub mod cell;
pub mod ffnn;
pub mod mlp;
pub mod rnn;

pub use cell::{cell_step, CellKind, RecurrentCell, RecurrentState, StackedRnn, StateNodes};
pub use ffnn::{Activation, FfnnLm, FfnnLmConfig};
pub use mlp::{train_toy_mlp, MlpInit, MlpRun, ToyMlp, TOY_DATA};
pub use rnn::{RnnLm, RnnLmConfig};

use crate::autodiff::{Graph, NodeId, Optimizer, OptimizerConfig, ParamSet};
use crate::corpus::Sentence;
use crate::error::Result;
use crate::eval::{EpochMetrics, EvalReport};
use crate::train::{check_finite, seeded_rng, DevOutcome, DevTracker, Schedule, DEFAULT_SEED};

/// Initialization bound for embedding matrices.
pub const EMBED_INIT: f64 = 0.1;

/// A model trained by minimizing a summed loss over training units
/// (minibatches or sentence pairs).
pub trait Trainable {
    type Unit;

    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Build the loss of one unit. Returns the scalar loss node and the
    /// number of tokens it covers.
    fn unit_loss(&self, g: &mut Graph<'_>, unit: &Self::Unit) -> Result<(NodeId, f64)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralTrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    /// Halve the learning rate when dev likelihood fails to improve.
    pub decay: bool,
    pub early_stop: bool,
    pub patience: usize,
    pub seed: u64,
    pub sort_by_length: bool,
}

impl Default for NeuralTrainConfig {
    fn default() -> Self {
        NeuralTrainConfig {
            optimizer: OptimizerConfig::adam(),
            epochs: 10,
            batch_size: 16,
            shuffle: true,
            decay: true,
            early_stop: true,
            patience: 3,
            seed: DEFAULT_SEED,
            sort_by_length: true,
        }
    }
}

impl NeuralTrainConfig {
    fn schedule(&self) -> Schedule {
        Schedule {
            learning_rate: self.optimizer.learning_rate,
            epochs: self.epochs,
            shuffle: self.shuffle,
            decay: self.decay,
            early_stop: self.early_stop,
            patience: self.patience,
            seed: self.seed,
        }
    }
}

/// Run the epoch loop: shuffled unit order, one optimizer update per unit,
/// dev evaluation after each epoch, learning-rate halving and early
/// stopping with restoration of the best-dev parameters.
pub fn train_units<M: Trainable>(
    model: &mut M,
    units: &[M::Unit],
    cfg: &NeuralTrainConfig,
    mut dev: impl FnMut(&M) -> Result<EvalReport>,
) -> Result<Vec<EpochMetrics>> {
    let schedule = cfg.schedule();
    schedule.validate(false)?;
    let mut optimizer = Optimizer::new(cfg.optimizer.clone())?;
    let mut rng = seeded_rng(cfg.seed);
    let mut tracker = DevTracker::default();
    let mut best: Option<ParamSet> = None;
    let mut history = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut token_sum = 0.0;
        for i in schedule.epoch_order(units.len(), &mut rng) {
            let grads = {
                let mut g = Graph::new(model.params());
                let (loss, tokens) = model.unit_loss(&mut g, &units[i])?;
                g.forward()?;
                let value = g.value(loss).scalar_value();
                check_finite(value, "training")?;
                loss_sum += value;
                token_sum += tokens;
                g.backward_from(loss)?
            };
            optimizer.step(model.params_mut(), grads)?;
        }
        let report = dev(model)?;
        let train_loss = if token_sum > 0.0 {
            loss_sum / token_sum
        } else {
            0.0
        };
        history.push(EpochMetrics::new(epoch, train_loss, &report));
        match tracker.observe(report.total_log_likelihood) {
            DevOutcome::Improved => {
                if cfg.early_stop {
                    best = Some(model.params().clone());
                }
            }
            DevOutcome::Worse(bad) => {
                if cfg.decay {
                    optimizer.set_learning_rate(optimizer.learning_rate() / 2.0);
                }
                if cfg.early_stop && bad >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some(best) = best {
        *model.params_mut() = best;
    }
    Ok(history)
}

pub(crate) use crate::ngram::history as window;

pub(crate) fn batches_for(
    sentences: &[Sentence],
    cfg: &NeuralTrainConfig,
) -> Result<Vec<crate::corpus::MiniBatch>> {
    crate::corpus::make_batches(sentences, cfg.batch_size, cfg.sort_by_length)
}
