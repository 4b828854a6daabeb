//! Shared epoch schedule: shuffling, learning-rate halving and best-dev
//! snapshotting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Rng = ChaCha8Rng;

pub const DEFAULT_SEED: u64 = 42;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub learning_rate: f64,
    pub epochs: usize,
    pub shuffle: bool,
    /// Halve the learning rate whenever dev likelihood fails to improve.
    pub decay: bool,
    /// Return the best-dev snapshot and stop after `patience` epochs
    /// without improvement.
    pub early_stop: bool,
    pub patience: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            learning_rate: 0.1,
            epochs: 10,
            shuffle: true,
            decay: true,
            early_stop: true,
            patience: 3,
            seed: DEFAULT_SEED,
        }
    }
}

impl Schedule {
    pub fn validate(&self, allow_zero_lr: bool) -> Result<()> {
        let ok = if allow_zero_lr {
            self.learning_rate >= 0.0
        } else {
            self.learning_rate > 0.0
        };
        if !ok || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "invalid learning rate {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn epoch_order(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.shuffle {
            order.shuffle(rng);
        }
        order
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DevOutcome {
    Improved,
    /// No improvement; carries the number of consecutive bad epochs.
    Worse(usize),
}

/// Tracks the best dev log-likelihood seen so far.
#[derive(Clone, Debug)]
pub struct DevTracker {
    best: f64,
    bad_epochs: usize,
}

impl Default for DevTracker {
    fn default() -> Self {
        DevTracker {
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }
}

impl DevTracker {
    pub fn observe(&mut self, dev_ll: f64) -> DevOutcome {
        if dev_ll > self.best {
            self.best = dev_ll;
            self.bad_epochs = 0;
            DevOutcome::Improved
        } else {
            self.bad_epochs += 1;
            DevOutcome::Worse(self.bad_epochs)
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

pub fn check_finite(loss: f64, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{what}: loss became {loss}")))
    }
}
