//! Two-input multi-layer perceptron trained to output 1 when both inputs
//! are equal and −1 otherwise: `y = w_hy · tanh(W_xh x + b_h) + b_y`.

use rand::seq::SliceRandom;

use crate::autodiff::{Graph, Optimizer, OptimizerConfig, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::{check_finite, seeded_rng};

pub const TOY_DATA: [([f64; 2], f64); 4] = [
    ([1.0, 1.0], 1.0),
    ([-1.0, 1.0], -1.0),
    ([1.0, -1.0], -1.0),
    ([-1.0, -1.0], 1.0),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlpInit {
    Random,
    Zero,
}

#[derive(Clone, Debug)]
pub struct ToyMlp {
    pub params: ParamSet,
    w_xh: ParamId,
    b_h: ParamId,
    w_hy: ParamId,
    b_y: ParamId,
}

impl ToyMlp {
    pub fn new(hidden: usize, init: MlpInit, seed: u64) -> Result<Self> {
        if hidden < 2 {
            return Err(Error::Config(
                "toy MLP needs at least 2 hidden units".into(),
            ));
        }
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let (w_xh, w_hy) = match init {
            MlpInit::Random => (
                Tensor::glorot(hidden, 2, &mut rng),
                Tensor::glorot(1, hidden, &mut rng),
            ),
            MlpInit::Zero => (Tensor::zeros(hidden, 2), Tensor::zeros(1, hidden)),
        };
        let w_xh = params.add("W_xh", w_xh);
        let b_h = params.add("b_h", Tensor::zeros(hidden, 1));
        let w_hy = params.add("w_hy", w_hy);
        let b_y = params.add("b_y", Tensor::zeros(1, 1));
        Ok(ToyMlp {
            params,
            w_xh,
            b_h,
            w_hy,
            b_y,
        })
    }

    fn output(&self, g: &mut Graph<'_>, x: [f64; 2]) -> crate::autodiff::NodeId {
        let x = g.input(Tensor::vector(&x));
        let w = g.parameter(self.w_xh);
        let b = g.parameter(self.b_h);
        let pre = g.affine(w, x, b);
        let h = g.tanh(pre);
        let w = g.parameter(self.w_hy);
        let b = g.parameter(self.b_y);
        g.affine(w, h, b)
    }

    pub fn predict(&self, x: [f64; 2]) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let y = self.output(&mut g, x);
        g.forward()?;
        Ok(g.value(y).scalar_value())
    }

    pub fn correct(&self, data: &[([f64; 2], f64)]) -> Result<usize> {
        let mut n = 0;
        for &(x, y) in data {
            if self.predict(x)?.signum() == y.signum() {
                n += 1;
            }
        }
        Ok(n)
    }
}

#[derive(Clone, Debug)]
pub struct MlpRun {
    pub mlp: ToyMlp,
    /// Summed squared error of each epoch.
    pub epoch_losses: Vec<f64>,
    /// First epoch after which every point had the right sign.
    pub solved_at: Option<usize>,
}

/// Plain SGD over shuffled data with a squared-error loss. Gradients are
/// clipped at the default global norm.
pub fn train_toy_mlp(
    data: &[([f64; 2], f64)],
    hidden: usize,
    learning_rate: f64,
    epochs: usize,
    init: MlpInit,
    seed: u64,
) -> Result<MlpRun> {
    let mlp = ToyMlp::new(hidden, init, seed)?;
    let mut rng = seeded_rng(seed.wrapping_add(1));
    let mut data = data.to_vec();
    let mut run = MlpRun {
        mlp,
        epoch_losses: Vec::with_capacity(epochs),
        solved_at: None,
    };
    let mut optimizer = if learning_rate > 0.0 {
        Some(Optimizer::new(OptimizerConfig::sgd(learning_rate))?)
    } else if learning_rate == 0.0 {
        None
    } else {
        return Err(Error::Config(format!(
            "invalid learning rate {learning_rate}"
        )));
    };
    for epoch in 1..=epochs {
        data.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &(x, ystar) in &data {
            let grads = {
                let mut g = Graph::new(&run.mlp.params);
                let y = run.mlp.output(&mut g, x);
                let target = g.input(Tensor::scalar(ystar));
                let loss = g.squared_distance(y, target);
                g.forward()?;
                let value = g.value(loss).scalar_value();
                check_finite(value, "toy MLP")?;
                epoch_loss += value;
                g.backward_from(loss)?
            };
            if let Some(opt) = optimizer.as_mut() {
                opt.step(&mut run.mlp.params, grads)?;
            }
        }
        run.epoch_losses.push(epoch_loss);
        if run.solved_at.is_none() && run.mlp.correct(&data)? == data.len() {
            run.solved_at = Some(epoch);
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_init_solves_the_task() {
        let run = train_toy_mlp(&TOY_DATA, 20, 0.1, 1000, MlpInit::Random, 42).unwrap();
        assert!(run.solved_at.is_some());
        assert_eq!(run.mlp.correct(&TOY_DATA).unwrap(), 4);
        assert!(run.epoch_losses.last().unwrap() < &run.epoch_losses[0]);
    }

    #[test]
    fn zero_init_cannot_separate() {
        let run = train_toy_mlp(&TOY_DATA, 20, 0.1, 1000, MlpInit::Zero, 42).unwrap();
        assert!(run.mlp.correct(&TOY_DATA).unwrap() < 4);
        assert!(run.solved_at.is_none());
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let run = train_toy_mlp(&TOY_DATA, 4, 0.0, 5, MlpInit::Random, 3).unwrap();
        for l in &run.epoch_losses {
            assert!((l - run.epoch_losses[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn hidden_size_must_be_two() {
        assert!(ToyMlp::new(1, MlpInit::Random, 0).is_err());
    }
}
