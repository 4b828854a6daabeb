//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

pub mod suites;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2s_core::autodiff::{Graph, NodeId, ParamSet};
use s2s_core::corpus::TokenId;
use s2s_core::search::{Step, StepModel};
use s2s_core::Result;

/// Step of the five-point central difference
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, whose truncation error
/// is O(h^4).
pub const FD_STEP: f64 = 1e-3;

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    let h = FD_STEP;
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Relative error with a floor on the denominator, so that gradients that
/// are zero up to round-off compare by absolute error.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between backprop gradients and central finite
/// differences, over every element of every parameter. `build` must add a
/// scalar loss to the graph and return it.
pub fn max_param_grad_error(params: &ParamSet, build: impl Fn(&mut Graph<'_>) -> NodeId) -> f64 {
    let analytic = {
        let mut g = Graph::new(params);
        let loss = build(&mut g);
        g.forward().unwrap();
        g.backward_from(loss).expect("backward pass")
    };
    let loss_at = |ps: &ParamSet| {
        let mut g = Graph::new(ps);
        let loss = build(&mut g);
        g.forward().unwrap();
        g.value(loss).scalar_value()
    };
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            let numeric = central_difference(
                |v| {
                    probe.get_mut(id).data_mut()[k] = v;
                    loss_at(&probe)
                },
                orig,
            );
            probe.get_mut(id).data_mut()[k] = orig;
            let a = analytic.get(id).map_or(0.0, |t| t.data()[k]);
            worst = worst.max(rel_error(a, numeric));
        }
    }
    worst
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Unconditional toy model whose next-token distribution is a fixed random
/// function of the whole prefix. The last token id is EOS.
#[derive(Clone, Debug)]
pub struct RandomToy {
    pub vocab: usize,
    pub seed: u64,
    /// Scale of the random logits; larger is peakier.
    pub temperature: f64,
    /// Lower bound on the EOS probability at every step.
    pub min_eos: f64,
}

impl RandomToy {
    pub fn new(vocab: usize, seed: u64) -> Self {
        RandomToy {
            vocab,
            seed,
            temperature: 2.0,
            min_eos: 0.0,
        }
    }

    pub fn eos_id(&self) -> TokenId {
        self.vocab - 1
    }

    pub fn dist(&self, prefix: &[TokenId]) -> Vec<f64> {
        let key = prefix
            .iter()
            .fold(mix(self.seed), |h, &t| mix(h ^ (t as u64 + 1)));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let logits: Vec<f64> = (0..self.vocab)
            .map(|_| self.temperature * rng.gen_range(-1.0..1.0))
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut p: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let eos = self.eos_id();
        if p[eos] < self.min_eos {
            let rest = 1.0 - p[eos];
            for (i, q) in p.iter_mut().enumerate() {
                if i != eos {
                    *q *= (1.0 - self.min_eos) / rest;
                }
            }
            p[eos] = self.min_eos;
        }
        p
    }
}

impl StepModel for RandomToy {
    type State = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn bos(&self) -> TokenId {
        usize::MAX
    }

    fn eos(&self) -> TokenId {
        self.eos_id()
    }

    fn start(&self, _: Option<&[TokenId]>) -> Result<Vec<TokenId>> {
        Ok(Vec::new())
    }

    fn step(&self, state: &Vec<TokenId>, prev: TokenId) -> Result<Step<Vec<TokenId>>> {
        let mut prefix = state.clone();
        if prev != usize::MAX {
            prefix.push(prev);
        }
        let p = self.dist(&prefix);
        Ok(Step {
            log_probs: p.iter().map(|x| x.ln()).collect(),
            state: prefix,
            attention: None,
        })
    }
}

/// Every EOS-terminated sequence of at most `max_len` tokens with its log
/// probability, by explicit enumeration.
pub fn enumerate_complete(model: &RandomToy, max_len: usize) -> Vec<(Vec<TokenId>, f64)> {
    let mut out = Vec::new();
    let mut frontier = vec![(Vec::new(), 0.0)];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for (prefix, lp) in frontier {
            let p = model.dist(&prefix);
            for (tok, q) in p.iter().enumerate() {
                let mut seq: Vec<TokenId> = prefix.clone();
                seq.push(tok);
                let score = lp + q.ln();
                if tok == model.eos_id() {
                    out.push((seq, score));
                } else {
                    next.push((seq, score));
                }
            }
        }
        frontier = next;
    }
    out
}

/// Copy-task pairs over `symbols` word types: target equals source.
pub fn copy_pairs(rng: &mut impl Rng, n: usize, symbols: usize, max_len: usize) -> Vec<String> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            (0..len)
                .map(|_| format!("w{}", rng.gen_range(0..symbols)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// The three-word toy model over `a` (0), `b` (1) and EOS (2): first step
/// `P(a)=0.5, P(b)=0.45, P(EOS)=0.05`; after `a`, EOS has 0.5 and `a`, `b`
/// 0.25 each; after `b`, EOS is certain.
#[derive(Clone, Copy, Debug, Default)]
pub struct ToyT;

impl ToyT {
    pub fn dist(prev: Option<TokenId>) -> [f64; 3] {
        match prev {
            None => [0.5, 0.45, 0.05],
            Some(0) => [0.25, 0.25, 0.5],
            Some(_) => [0.0, 0.0, 1.0],
        }
    }
}

impl StepModel for ToyT {
    type State = Option<TokenId>;

    fn vocab_size(&self) -> usize {
        3
    }

    fn bos(&self) -> TokenId {
        usize::MAX
    }

    fn eos(&self) -> TokenId {
        2
    }

    fn start(&self, _: Option<&[TokenId]>) -> Result<Option<TokenId>> {
        Ok(None)
    }

    fn step(&self, _: &Option<TokenId>, prev: TokenId) -> Result<Step<Option<TokenId>>> {
        let prev = (prev != usize::MAX).then_some(prev);
        Ok(Step {
            log_probs: Self::dist(prev).iter().map(|p| p.ln()).collect(),
            state: prev,
            attention: None,
        })
    }
}
