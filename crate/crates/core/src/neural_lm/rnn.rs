//! Recurrent language model: embed the previous word, advance a stack of
//! recurrent cells, and predict the next word with a softmax layer.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamSet};
use crate::corpus::{MiniBatch, Sentence, TokenId, Vocabulary, BOS, UNK};
use crate::error::{Error, Result};
use crate::eval::{evaluate_lm, EpochMetrics, SentenceScorer, TokenScore};
use crate::search::{Step, StepModel};
use crate::tensor::{log_softmax_slice, Tensor};

use super::cell::{CellKind, RecurrentState, StackedRnn, StateNodes};
use super::{batches_for, train_units, NeuralTrainConfig, Trainable, EMBED_INIT};

#[derive(Clone, Debug, PartialEq)]
pub struct RnnLmConfig {
    pub cell: CellKind,
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub residual: bool,
}

impl Default for RnnLmConfig {
    fn default() -> Self {
        RnnLmConfig {
            cell: CellKind::Lstm,
            embed_dim: 64,
            hidden: 128,
            layers: 1,
            residual: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RnnLm {
    vocab: Vocabulary,
    config: RnnLmConfig,
    pub params: ParamSet,
    embed: ParamId,
    rnn: StackedRnn,
    out_w: ParamId,
    out_b: ParamId,
}

impl RnnLm {
    pub fn new<R: Rng + ?Sized>(
        vocab: Vocabulary,
        config: RnnLmConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.embed_dim == 0 || config.hidden == 0 {
            return Err(Error::Config(
                "embedding and hidden sizes must be positive".into(),
            ));
        }
        let v = vocab.len();
        let mut params = ParamSet::new();
        let embed = params.add(
            "embed",
            Tensor::uniform(config.embed_dim, v, EMBED_INIT, rng),
        );
        let rnn = StackedRnn::new(
            &mut params,
            "rnn",
            config.cell,
            config.embed_dim,
            config.hidden,
            config.layers,
            config.residual,
            rng,
        )?;
        let out_w = params.add("out.W", Tensor::glorot(v, config.hidden, rng));
        let out_b = params.add("out.b", Tensor::zeros(v, 1));
        Ok(RnnLm {
            vocab,
            config,
            params,
            embed,
            rnn,
            out_w,
            out_b,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &RnnLmConfig {
        &self.config
    }

    /// Replace every parameter with the named tensors (shape-checked).
    pub fn load_params<'a>(
        &mut self,
        named: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
    ) -> Result<()> {
        self.params.load_named(named)
    }

    /// One step over a column batch of previous tokens.
    pub fn step_nodes(
        &self,
        g: &mut Graph<'_>,
        prev: Vec<TokenId>,
        states: &[StateNodes],
    ) -> Result<(NodeId, Vec<StateNodes>)> {
        let x = g.lookup_columns(self.embed, prev);
        let (h, next) = self.rnn.step(g, x, states)?;
        let w = g.parameter(self.out_w);
        let b = g.parameter(self.out_b);
        Ok((g.affine(w, h, b), next))
    }

    /// Score nodes for every time step of a batch, starting from `states`.
    pub fn unroll(
        &self,
        g: &mut Graph<'_>,
        batch: &MiniBatch,
        mut states: Vec<StateNodes>,
    ) -> Result<Vec<NodeId>> {
        let width = batch.batch_size();
        let mut scores = Vec::with_capacity(batch.max_len());
        for t in 0..batch.max_len() {
            let prev = if t == 0 {
                vec![BOS; width]
            } else {
                batch.tokens[t - 1].clone()
            };
            let (s, next) = self.step_nodes(g, prev, &states)?;
            states = next;
            scores.push(s);
        }
        Ok(scores)
    }

    /// Masked negative log likelihood summed over the batch.
    pub fn batch_loss(&self, g: &mut Graph<'_>, batch: &MiniBatch) -> Result<NodeId> {
        let init = self.rnn.zero_state(g, batch.batch_size());
        self.masked_loss(g, batch, init)
    }

    pub(crate) fn masked_loss(
        &self,
        g: &mut Graph<'_>,
        batch: &MiniBatch,
        init: Vec<StateNodes>,
    ) -> Result<NodeId> {
        if batch.max_len() == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        let scores = self.unroll(g, batch, init)?;
        let losses: Vec<NodeId> = scores
            .iter()
            .enumerate()
            .map(|(t, &s)| {
                g.pick_neg_log_softmax_batch(s, batch.tokens[t].clone(), batch.mask[t].clone())
            })
            .collect();
        Ok(g.sum_all(&losses))
    }

    /// Loss of a single sentence.
    pub fn sentence_loss(&self, sentence: &Sentence) -> Result<f64> {
        let batch =
            crate::corpus::make_batches(std::slice::from_ref(sentence), 1, false)?.remove(0);
        let mut g = Graph::new(&self.params);
        let loss = self.batch_loss(&mut g, &batch)?;
        g.forward()?;
        Ok(g.value(loss).scalar_value())
    }

    /// Log-probabilities of the next token plus the advanced state.
    pub fn next_log_probs(
        &self,
        state: &[RecurrentState],
        prev: TokenId,
    ) -> Result<(Vec<f64>, Vec<RecurrentState>)> {
        let mut g = Graph::new(&self.params);
        let nodes: Vec<StateNodes> = state.iter().map(|s| s.to_nodes(&mut g)).collect();
        let (s, next) = self.step_nodes(&mut g, vec![prev], &nodes)?;
        g.forward()?;
        let lp = log_softmax_slice(g.value(s).data());
        let next = next
            .iter()
            .map(|n| RecurrentState::from_nodes(&g, n))
            .collect();
        Ok((lp, next))
    }

    pub fn zero_state(&self) -> Vec<RecurrentState> {
        self.rnn.zero_values(1)
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

impl Trainable for RnnLm {
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

impl StepModel for RnnLm {
    type State = Vec<RecurrentState>;

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn start(&self, _source: Option<&[TokenId]>) -> Result<Self::State> {
        Ok(self.zero_state())
    }

    fn step(&self, state: &Self::State, prev: TokenId) -> Result<Step<Self::State>> {
        let (log_probs, state) = self.next_log_probs(state, prev)?;
        Ok(Step {
            log_probs,
            state,
            attention: None,
        })
    }
}

/// Shared scoring for neural models: the UNK token additionally pays the
/// uniform unknown-word factor.
pub(crate) fn score_tokens(
    vocab: &Vocabulary,
    target: &Sentence,
    mut next: impl FnMut(TokenId) -> Result<Vec<f64>>,
) -> Result<Vec<TokenScore>> {
    let unk_factor = -(vocab.v_all() as f64).ln();
    let mut prev = BOS;
    let mut out = Vec::with_capacity(target.len());
    for &tok in target.iter() {
        if tok >= vocab.len() {
            return Err(Error::Data(format!(
                "token id {tok} outside the vocabulary"
            )));
        }
        let lp = next(prev)?[tok];
        let factor = if tok == UNK { unk_factor } else { 0.0 };
        out.push(TokenScore {
            logprob: lp + factor,
            unk_factor: factor,
        });
        prev = tok;
    }
    Ok(out)
}

impl SentenceScorer for RnnLm {
    fn target_vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score_target(
        &self,
        _source: Option<&Sentence>,
        target: &Sentence,
    ) -> Result<Vec<TokenScore>> {
        let mut state = self.zero_state();
        score_tokens(&self.vocab, target, |prev| {
            let (lp, next) = self.next_log_probs(&state, prev)?;
            state = next;
            Ok(lp)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, make_batches, UnkPolicy, EOS};
    use crate::search::greedy;
    use crate::train::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn small(cell: CellKind, vocab: Vocabulary, seed: u64) -> RnnLm {
        let cfg = RnnLmConfig {
            cell,
            embed_dim: 4,
            hidden: 5,
            layers: 2,
            residual: false,
        };
        RnnLm::new(vocab, cfg, &mut seeded_rng(seed)).unwrap()
    }

    fn vocab() -> Vocabulary {
        build_vocab(&["a b c d"], UnkPolicy::KeepAll).unwrap()
    }

    #[test]
    fn zero_parameters_give_uniform() {
        let mut lm = small(CellKind::Gru, vocab(), 0);
        for id in lm.params.ids().collect::<Vec<_>>() {
            lm.params.get_mut(id).data_mut().fill(0.0);
        }
        let v = lm.vocab().len() as f64;
        let (lp, _) = lm.next_log_probs(&lm.zero_state(), 4).unwrap();
        for x in lp {
            assert!((x.exp() - 1.0 / v).abs() < 1e-15);
        }
    }

    #[test]
    fn step_distribution_sums_to_one() {
        for kind in [
            CellKind::Rnn,
            CellKind::Lstm,
            CellKind::LstmForget,
            CellKind::Gru,
        ] {
            let lm = small(kind, vocab(), 3);
            let mut state = lm.zero_state();
            for tok in [BOS, 3, 4] {
                let (lp, next) = lm.next_log_probs(&state, tok).unwrap();
                let z: f64 = lp.iter().map(|l| l.exp()).sum();
                assert!((z - 1.0).abs() < 1e-12);
                state = next;
            }
        }
    }

    #[test]
    fn sentence_loss_matches_scorer() {
        let v = vocab();
        let lm = small(CellKind::LstmForget, v.clone(), 1);
        let s = v.encode("a c b", true);
        let scored: f64 = lm
            .score_target(None, &s)
            .unwrap()
            .iter()
            .map(|t| t.logprob)
            .sum();
        assert!((lm.sentence_loss(&s).unwrap() + scored).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn batched_loss_is_sum_of_sentence_losses(
            lens in proptest::collection::vec(1usize..6, 1..5),
            seed in 0u64..1000,
        ) {
            let v = vocab();
            let lm = small(CellKind::Lstm, v.clone(), seed);
            let mut rng = seeded_rng(seed);
            let sents: Vec<Sentence> = lens
                .iter()
                .map(|&n| {
                    let mut ids: Vec<TokenId> = (0..n - 1).map(|_| rng.gen_range(2..v.len())).collect();
                    ids.push(EOS);
                    Sentence(ids)
                })
                .collect();
            let batch = make_batches(&sents, sents.len(), false).unwrap().remove(0);
            let mut g = Graph::new(&lm.params);
            let loss = lm.batch_loss(&mut g, &batch).unwrap();
            g.forward().unwrap();
            let batched = g.value(loss).scalar_value();
            let separate: f64 = sents.iter().map(|s| lm.sentence_loss(s).unwrap()).sum();
            prop_assert!((batched - separate).abs() < 1e-8);
        }
    }

    #[test]
    fn learns_alternation() {
        let v = build_vocab(&["a b"], UnkPolicy::KeepAll).unwrap();
        let data: Vec<Sentence> = (0..20).map(|_| v.encode("a b a b a b a b", true)).collect();
        let cfg = RnnLmConfig {
            cell: CellKind::Lstm,
            embed_dim: 8,
            hidden: 16,
            layers: 1,
            residual: false,
        };
        let mut lm = RnnLm::new(v.clone(), cfg, &mut seeded_rng(7)).unwrap();
        let train_cfg = NeuralTrainConfig {
            optimizer: crate::autodiff::OptimizerConfig {
                learning_rate: 0.01,
                ..crate::autodiff::OptimizerConfig::adam()
            },
            epochs: 30,
            batch_size: 4,
            ..NeuralTrainConfig::default()
        };
        lm.train(&data, None, &train_cfg).unwrap();
        let mut state = lm.zero_state();
        let a = v.id("a").unwrap();
        let b = v.id("b").unwrap();
        for tok in [BOS, a, b] {
            state = lm.next_log_probs(&state, tok).unwrap().1;
        }
        let (lp, _) = lm.next_log_probs(&state, a).unwrap();
        assert!(lp[b].exp() > 0.9, "P(b | ... a) = {}", lp[b].exp());
        let out = greedy(&lm, None, 20).unwrap();
        assert_eq!(v.decode_line(&out.tokens), "a b a b a b a b");
    }
}
