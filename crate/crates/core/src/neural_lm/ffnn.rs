//! Feed-forward n-gram language model: concatenate the embeddings of the
//! previous `n − 1` words, apply one hidden layer, predict with a softmax.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamSet};
use crate::corpus::{MiniBatch, Sentence, TokenId, Vocabulary, BOS};
use crate::error::{Error, Result};
use crate::eval::{evaluate_lm, EpochMetrics, SentenceScorer, TokenScore};
use crate::search::{Step, StepModel};
use crate::tensor::{log_softmax_slice, Tensor};

use super::rnn::score_tokens;
use super::{batches_for, train_units, window, NeuralTrainConfig, Trainable, EMBED_INIT};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown nonlinearity {other:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnnLmConfig {
    pub order: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for FfnnLmConfig {
    fn default() -> Self {
        FfnnLmConfig {
            order: 3,
            embed_dim: 64,
            hidden: 128,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FfnnLm {
    vocab: Vocabulary,
    config: FfnnLmConfig,
    pub params: ParamSet,
    embed: ParamId,
    w_mh: ParamId,
    b_h: ParamId,
    w_hs: ParamId,
    b_s: ParamId,
}

impl FfnnLm {
    pub fn new<R: Rng + ?Sized>(
        vocab: Vocabulary,
        config: FfnnLmConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.order < 2 {
            return Err(Error::Config(
                "feed-forward LM order must be at least 2".into(),
            ));
        }
        if config.embed_dim == 0 || config.hidden == 0 {
            return Err(Error::Config(
                "embedding and hidden sizes must be positive".into(),
            ));
        }
        let v = vocab.len();
        let m = config.embed_dim * (config.order - 1);
        let mut params = ParamSet::new();
        let embed = params.add("M", Tensor::uniform(config.embed_dim, v, EMBED_INIT, rng));
        let w_mh = params.add("W_mh", Tensor::glorot(config.hidden, m, rng));
        let b_h = params.add("b_h", Tensor::zeros(config.hidden, 1));
        let w_hs = params.add("W_hs", Tensor::glorot(v, config.hidden, rng));
        let b_s = params.add("b_s", Tensor::zeros(v, 1));
        Ok(FfnnLm {
            vocab,
            config,
            params,
            embed,
            w_mh,
            b_h,
            w_hs,
            b_s,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &FfnnLmConfig {
        &self.config
    }

    pub fn load_params<'a>(
        &mut self,
        named: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
    ) -> Result<()> {
        self.params.load_named(named)
    }

    /// Scores for a set of contexts, one per column. `contexts[k]` holds
    /// the `k`-th context slot (oldest first) of every column.
    fn scores(&self, g: &mut Graph<'_>, contexts: Vec<Vec<TokenId>>) -> NodeId {
        let slots = contexts
            .into_iter()
            .map(|ids| g.lookup_columns(self.embed, ids))
            .collect();
        let m = g.concat_rows(slots);
        let w = g.parameter(self.w_mh);
        let b = g.parameter(self.b_h);
        let pre = g.affine(w, m, b);
        let h = match self.config.activation {
            Activation::Tanh => g.tanh(pre),
            Activation::Relu => g.relu(pre),
        };
        let w = g.parameter(self.w_hs);
        let b = g.parameter(self.b_s);
        g.affine(w, h, b)
    }

    /// Masked loss over every position of a batch, all positions scored in
    /// one wide matrix.
    pub fn batch_loss(&self, g: &mut Graph<'_>, batch: &MiniBatch) -> Result<NodeId> {
        let width = self.config.order - 1;
        let mut contexts = vec![Vec::new(); width];
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for j in 0..batch.batch_size() {
            let column: Vec<TokenId> = batch.tokens.iter().map(|row| row[j]).collect();
            for t in 0..batch.max_len() {
                if batch.mask[t][j] == 0.0 {
                    continue;
                }
                for (k, tok) in window(&column, t, width).into_iter().enumerate() {
                    contexts[k].push(tok);
                }
                targets.push(column[t]);
                weights.push(batch.mask[t][j]);
            }
        }
        if targets.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let s = self.scores(g, contexts);
        Ok(g.pick_neg_log_softmax_batch(s, targets, weights))
    }

    /// Log-probabilities of the next word given the `n − 1` previous ones.
    pub fn next_log_probs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        let width = self.config.order - 1;
        if context.len() != width {
            return Err(Error::Data(format!(
                "context has {} tokens, model needs {width}",
                context.len()
            )));
        }
        let mut g = Graph::new(&self.params);
        let s = self.scores(&mut g, context.iter().map(|&t| vec![t]).collect());
        g.forward()?;
        Ok(log_softmax_slice(g.value(s).data()))
    }

    pub fn train(
        &mut self,
        train: &[Sentence],
        dev: Option<&[Sentence]>,
        cfg: &NeuralTrainConfig,
    ) -> Result<Vec<EpochMetrics>> {
        let units = batches_for(train, cfg)?;
        let dev = dev.unwrap_or(train);
        train_units(self, &units, cfg, |m| evaluate_lm(m, dev))
    }
}

impl Trainable for FfnnLm {
    type Unit = MiniBatch;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn unit_loss(&self, g: &mut Graph<'_>, unit: &MiniBatch) -> Result<(NodeId, f64)> {
        Ok((self.batch_loss(g, unit)?, unit.mask_sum()))
    }
}

impl StepModel for FfnnLm {
    /// The last `n − 1` tokens.
    type State = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn start(&self, _source: Option<&[TokenId]>) -> Result<Vec<TokenId>> {
        // BOS fills the window; the first step's `prev` is BOS as well
        Ok(vec![BOS; self.config.order - 2])
    }

    fn step(&self, state: &Vec<TokenId>, prev: TokenId) -> Result<Step<Vec<TokenId>>> {
        let mut ctx = state.clone();
        ctx.push(prev);
        let log_probs = self.next_log_probs(&ctx)?;
        ctx.remove(0);
        Ok(Step {
            log_probs,
            state: ctx,
            attention: None,
        })
    }
}

impl SentenceScorer for FfnnLm {
    fn target_vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score_target(
        &self,
        _source: Option<&Sentence>,
        target: &Sentence,
    ) -> Result<Vec<TokenScore>> {
        let mut state = self.start(None)?;
        score_tokens(&self.vocab, target, |prev| {
            let step = self.step(&state, prev)?;
            state = step.state;
            Ok(step.log_probs)
        })
    }
}
