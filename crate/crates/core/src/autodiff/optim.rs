//! First-order optimizers: plain SGD, momentum, AdaGrad and Adam.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::params::{Gradients, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    AdaGrad,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "momentum" => Ok(OptimizerKind::Momentum),
            "adagrad" => Ok(OptimizerKind::AdaGrad),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::AdaGrad => "adagrad",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm cap applied before each update; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::adam()
        }
    }

    pub fn adam() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 0.001,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(5.0),
        }
    }

    pub fn with_kind(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig {
            kind,
            learning_rate,
            ..Self::adam()
        }
    }
}

/// Scale `grads` in place so their global L2 norm does not exceed `max_norm`.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        if config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                config.learning_rate
            )));
        }
        if let Some(c) = config.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!(
                    "clip norm must be positive, got {c}"
                )));
            }
        }
        Ok(Optimizer {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParamSet, mut grads: Gradients) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        if let Some(max_norm) = self.config.clip_norm {
            clip_gradients(&mut grads, max_norm);
        }
        if self.first.len() < params.len() {
            self.first.resize(params.len(), None);
            self.second.resize(params.len(), None);
        }
        self.steps += 1;
        let c = &self.config;
        let lr = c.learning_rate;
        for (id, g) in grads.iter() {
            let theta = params.get_mut(id);
            let shape = theta.shape();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (t, g) in theta.data_mut().iter_mut().zip(g.data()) {
                        *t -= lr * g;
                    }
                }
                OptimizerKind::Momentum => {
                    let v = self.first[id.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
                    for ((t, v), g) in theta.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                        *v = c.momentum * *v + g;
                        *t -= lr * *v;
                    }
                }
                OptimizerKind::AdaGrad => {
                    let acc =
                        self.second[id.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
                    for ((t, a), g) in theta
                        .data_mut()
                        .iter_mut()
                        .zip(acc.data_mut())
                        .zip(g.data())
                    {
                        *a += g * g;
                        *t -= lr * g / (a.sqrt() + c.epsilon);
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.first[id.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
                    let v =
                        self.second[id.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
                    let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
                    let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
                    for (((t, m), v), g) in theta
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                        .zip(g.data())
                    {
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *t -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
