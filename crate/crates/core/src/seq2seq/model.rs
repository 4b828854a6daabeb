use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamSet};
use crate::corpus::{Sentence, TokenId, Vocabulary, BOS};
use crate::error::{Error, Result};
use crate::eval::{evaluate_conditional, EpochMetrics, SentenceScorer, TokenScore};
use crate::neural_lm::rnn::score_tokens;
use crate::neural_lm::{
    train_units, CellKind, NeuralTrainConfig, RecurrentState, StackedRnn, StateNodes, Trainable,
    EMBED_INIT,
};
use crate::search::{Step, StepModel};
use crate::tensor::{log_softmax_slice, Tensor};

use super::attention::{AttentionKind, Scorer, ATTN_HIDDEN_DEFAULT};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Forward,
    Reverse,
    Bidirectional,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(EncoderKind::Forward),
            "reverse" => Ok(EncoderKind::Reverse),
            "bidir" | "bidirectional" => Ok(EncoderKind::Bidirectional),
            other => Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Forward => "forward",
            EncoderKind::Reverse => "reverse",
            EncoderKind::Bidirectional => "bidir",
        })
    }
}

/// How the decoder's initial state is derived from the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BridgeKind {
    /// Copy the final encoder state (single-direction encoders).
    Final,
    /// Concatenate the two final states of a bidirectional encoder.
    Concat,
    /// `tanh(W→ h→ + W← h← + b)`, per layer.
    Tanh,
}

impl FromStr for BridgeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(BridgeKind::Final),
            "concat" => Ok(BridgeKind::Concat),
            "tanh" => Ok(BridgeKind::Tanh),
            other => Err(Error::Config(format!("unknown bridge kind {other:?}"))),
        }
    }
}

impl fmt::Display for BridgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BridgeKind::Final => "final",
            BridgeKind::Concat => "concat",
            BridgeKind::Tanh => "tanh",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncDecConfig {
    pub encoder: EncoderKind,
    pub bridge: BridgeKind,
    pub attention: AttentionKind,
    pub cell: CellKind,
    pub embed_dim: usize,
    /// Hidden size of each encoder direction.
    pub hidden: usize,
    pub layers: usize,
    pub attn_hidden: usize,
}

impl Default for EncDecConfig {
    /// Attentional model: bidirectional encoder, tanh bridge, MLP scores.
    fn default() -> Self {
        EncDecConfig {
            encoder: EncoderKind::Bidirectional,
            bridge: BridgeKind::Tanh,
            attention: AttentionKind::Mlp,
            cell: CellKind::LstmForget,
            embed_dim: 64,
            hidden: 128,
            layers: 1,
            attn_hidden: ATTN_HIDDEN_DEFAULT,
        }
    }
}

impl EncDecConfig {
    /// Plain encoder-decoder: forward encoder, final state copied.
    pub fn plain() -> Self {
        EncDecConfig {
            encoder: EncoderKind::Forward,
            bridge: BridgeKind::Final,
            attention: AttentionKind::None,
            ..Self::default()
        }
    }

    pub fn enc_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Bidirectional => 2 * self.hidden,
            _ => self.hidden,
        }
    }

    pub fn dec_dim(&self) -> usize {
        match self.bridge {
            BridgeKind::Concat => 2 * self.hidden,
            _ => self.hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config(
                "embedding size, hidden size and layers must be positive".into(),
            ));
        }
        match (self.encoder, self.bridge) {
            (EncoderKind::Bidirectional, BridgeKind::Final) => Err(Error::Config(
                "a bidirectional encoder needs the concat or tanh bridge".into(),
            )),
            (EncoderKind::Forward | EncoderKind::Reverse, BridgeKind::Concat) => Err(
                Error::Config("the concat bridge needs a bidirectional encoder".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
struct BridgeLayer {
    w_fwd: ParamId,
    w_bwd: Option<ParamId>,
    b: ParamId,
}

/// Encoded source: `H` with one column per source word, and the decoder's
/// initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub h: Arc<Tensor>,
    pub init: Vec<RecurrentState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecState {
    pub layers: Vec<RecurrentState>,
    /// Previous context vector (attentional models; zero at the start).
    pub context: Option<Tensor>,
    pub h_f: Arc<Tensor>,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub log_probs: Vec<f64>,
    pub state: DecState,
    pub attention: Option<Vec<f64>>,
}

struct StepNodes {
    scores: NodeId,
    states: Vec<StateNodes>,
    context: Option<NodeId>,
    alpha: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct EncDecModel {
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    config: EncDecConfig,
    pub params: ParamSet,
    src_embed: ParamId,
    tgt_embed: ParamId,
    enc_fwd: Option<StackedRnn>,
    enc_bwd: Option<StackedRnn>,
    bridge: Vec<BridgeLayer>,
    decoder: StackedRnn,
    scorer: Option<Scorer>,
    out_w: ParamId,
    out_b: ParamId,
}

impl EncDecModel {
    pub fn new<R: Rng + ?Sized>(
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        config: EncDecConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut params = ParamSet::new();
        let src_embed = params.add(
            "src.embed",
            Tensor::uniform(c.embed_dim, src_vocab.len(), EMBED_INIT, rng),
        );
        let tgt_embed = params.add(
            "tgt.embed",
            Tensor::uniform(c.embed_dim, tgt_vocab.len(), EMBED_INIT, rng),
        );
        let stack = |params: &mut ParamSet, prefix: &str, inp: usize, hid: usize, rng: &mut R| {
            StackedRnn::new(params, prefix, c.cell, inp, hid, c.layers, false, rng)
        };
        let (enc_fwd, enc_bwd) = match c.encoder {
            EncoderKind::Forward => (
                Some(stack(&mut params, "enc.fwd", c.embed_dim, c.hidden, rng)?),
                None,
            ),
            EncoderKind::Reverse => (
                None,
                Some(stack(&mut params, "enc.bwd", c.embed_dim, c.hidden, rng)?),
            ),
            EncoderKind::Bidirectional => (
                Some(stack(&mut params, "enc.fwd", c.embed_dim, c.hidden, rng)?),
                Some(stack(&mut params, "enc.bwd", c.embed_dim, c.hidden, rng)?),
            ),
        };
        let bridge = if c.bridge == BridgeKind::Tanh {
            (0..c.layers)
                .map(|l| {
                    let w_fwd = params.add(
                        format!("bridge.l{l}.W_fwd"),
                        Tensor::glorot(c.hidden, c.hidden, rng),
                    );
                    let w_bwd = (c.encoder == EncoderKind::Bidirectional).then(|| {
                        params.add(
                            format!("bridge.l{l}.W_bwd"),
                            Tensor::glorot(c.hidden, c.hidden, rng),
                        )
                    });
                    let b = params.add(format!("bridge.l{l}.b"), Tensor::zeros(c.hidden, 1));
                    BridgeLayer { w_fwd, w_bwd, b }
                })
                .collect()
        } else {
            Vec::new()
        };
        let attentional = c.attention != AttentionKind::None;
        let dec_in = c.embed_dim + if attentional { c.enc_dim() } else { 0 };
        let decoder = stack(&mut params, "dec", dec_in, c.dec_dim(), rng)?;
        let scorer = Scorer::new(
            &mut params,
            c.attention,
            c.enc_dim(),
            c.dec_dim(),
            c.attn_hidden,
            rng,
        )?;
        let out_in = c.dec_dim() + if attentional { c.enc_dim() } else { 0 };
        let out_w = params.add("out.W", Tensor::glorot(tgt_vocab.len(), out_in, rng));
        let out_b = params.add("out.b", Tensor::zeros(tgt_vocab.len(), 1));
        Ok(EncDecModel {
            src_vocab,
            tgt_vocab,
            config,
            params,
            src_embed,
            tgt_embed,
            enc_fwd,
            enc_bwd,
            bridge,
            decoder,
            scorer,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &EncDecConfig {
        &self.config
    }

    pub fn src_vocab(&self) -> &Vocabulary {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &Vocabulary {
        &self.tgt_vocab
    }

    pub fn is_attentional(&self) -> bool {
        self.scorer.is_some()
    }

    pub fn attention_kind(&self) -> AttentionKind {
        self.scorer
            .as_ref()
            .map(Scorer::kind)
            .unwrap_or(AttentionKind::None)
    }

    pub fn load_params<'a>(
        &mut self,
        named: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
    ) -> Result<()> {
        self.params.load_named(named)
    }

    /// Source matrix node and decoder initial states.
    fn encode_nodes(
        &self,
        g: &mut Graph<'_>,
        src: &[TokenId],
    ) -> Result<(NodeId, Vec<StateNodes>)> {
        if src.is_empty() {
            return Err(Error::Data("empty source sentence".into()));
        }
        if let Some(&bad) = src.iter().find(|&&t| t >= self.src_vocab.len()) {
            return Err(Error::Data(format!(
                "source token id {bad} outside the vocabulary"
            )));
        }
        let n = src.len();
        let embeds: Vec<NodeId> = src.iter().map(|&t| g.lookup(self.src_embed, t)).collect();
        let run = |g: &mut Graph<'_>,
                   rnn: &StackedRnn,
                   order: &mut dyn Iterator<Item = usize>|
         -> Result<(Vec<Option<NodeId>>, Vec<StateNodes>)> {
            let mut states = rnn.zero_state(g, 1);
            let mut cols = vec![None; n];
            for j in order {
                let (out, next) = rnn.step(g, embeds[j], &states)?;
                states = next;
                cols[j] = Some(out);
            }
            Ok((cols, states))
        };
        let fwd = match &self.enc_fwd {
            Some(rnn) => Some(run(g, rnn, &mut (0..n))?),
            None => None,
        };
        let bwd = match &self.enc_bwd {
            Some(rnn) => Some(run(g, rnn, &mut (0..n).rev())?),
            None => None,
        };
        let columns: Vec<NodeId> = (0..n)
            .map(|j| match (&fwd, &bwd) {
                (Some((f, _)), Some((b, _))) => g.concat_rows(vec![b[j].unwrap(), f[j].unwrap()]),
                (Some((f, _)), None) => f[j].unwrap(),
                (None, Some((b, _))) => b[j].unwrap(),
                (None, None) => unreachable!("an encoder has at least one direction"),
            })
            .collect();
        let h_f = if columns.len() == 1 {
            columns[0]
        } else {
            g.concat_cols(columns)
        };

        let fwd_final = fwd.map(|(_, s)| s);
        let bwd_final = bwd.map(|(_, s)| s);
        let init = match self.config.bridge {
            BridgeKind::Final => fwd_final.or(bwd_final).expect("single-direction encoder"),
            BridgeKind::Concat => {
                let (f, b) = (fwd_final.unwrap(), bwd_final.unwrap());
                f.iter()
                    .zip(&b)
                    .map(|(f, b)| StateNodes {
                        h: g.concat_rows(vec![b.h, f.h]),
                        c: match (b.c, f.c) {
                            (Some(bc), Some(fc)) => Some(g.concat_rows(vec![bc, fc])),
                            _ => None,
                        },
                    })
                    .collect()
            }
            BridgeKind::Tanh => {
                let primary = fwd_final.as_ref().or(bwd_final.as_ref()).unwrap().clone();
                let backward = if self.enc_fwd.is_some() {
                    bwd_final
                } else {
                    None
                };
                let zero = self.decoder.zero_state(g, 1);
                self.bridge
                    .iter()
                    .enumerate()
                    .map(|(l, layer)| {
                        let w = g.parameter(layer.w_fwd);
                        let b = g.parameter(layer.b);
                        let mut pre = g.affine(w, primary[l].h, b);
                        if let (Some(wb), Some(bs)) = (layer.w_bwd, backward.as_ref()) {
                            let wb = g.parameter(wb);
                            let term = g.matmul(wb, bs[l].h);
                            pre = g.add(pre, term);
                        }
                        StateNodes {
                            h: g.tanh(pre),
                            c: zero[l].c,
                        }
                    })
                    .collect()
            }
        };
        Ok((h_f, init))
    }

    fn step_nodes(
        &self,
        g: &mut Graph<'_>,
        h_f: NodeId,
        src_len: usize,
        prev: TokenId,
        states: &[StateNodes],
        context: Option<NodeId>,
    ) -> Result<StepNodes> {
        if prev >= self.tgt_vocab.len() {
            return Err(Error::Data(format!(
                "target token id {prev} outside the vocabulary"
            )));
        }
        let emb = g.lookup(self.tgt_embed, prev);
        let input = match context {
            Some(c) => g.concat_rows(vec![emb, c]),
            None => emb,
        };
        let (h, states) = self.decoder.step(g, input, states)?;
        let (out_in, context, alpha) = match &self.scorer {
            Some(scorer) => {
                let a = scorer.scores(g, h_f, h, src_len);
                let alpha = g.softmax(a);
                let c = g.matmul(h_f, alpha);
                (g.concat_rows(vec![h, c]), Some(c), Some(alpha))
            }
            None => (h, None, None),
        };
        let w = g.parameter(self.out_w);
        let b = g.parameter(self.out_b);
        Ok(StepNodes {
            scores: g.affine(w, out_in, b),
            states,
            context,
            alpha,
        })
    }

    fn zero_context(&self, g: &mut Graph<'_>) -> Option<NodeId> {
        self.scorer
            .is_some()
            .then(|| g.input(Tensor::zeros(self.config.enc_dim(), 1)))
    }

    /// Build `Σ_t −log p_t[e_t]` for one pair.
    pub fn loss_node(&self, g: &mut Graph<'_>, src: &[TokenId], tgt: &[TokenId]) -> Result<NodeId> {
        if tgt.is_empty() {
            return Err(Error::Data("empty target sentence".into()));
        }
        let (h_f, mut states) = self.encode_nodes(g, src)?;
        let mut context = self.zero_context(g);
        let mut prev = BOS;
        let mut losses = Vec::with_capacity(tgt.len());
        for &tok in tgt {
            if tok >= self.tgt_vocab.len() {
                return Err(Error::Data(format!(
                    "target token id {tok} outside the vocabulary"
                )));
            }
            let step = self.step_nodes(g, h_f, src.len(), prev, &states, context)?;
            losses.push(g.pick_neg_log_softmax(step.scores, tok));
            states = step.states;
            context = step.context;
            prev = tok;
        }
        Ok(g.sum_all(&losses))
    }

    pub fn sentence_loss(&self, src: &Sentence, tgt: &Sentence) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let loss = self.loss_node(&mut g, src, tgt)?;
        g.forward()?;
        Ok(g.value(loss).scalar_value())
    }

    pub fn encode(&self, src: &[TokenId]) -> Result<Encoding> {
        let mut g = Graph::new(&self.params);
        let (h_f, init) = self.encode_nodes(&mut g, src)?;
        g.forward()?;
        Ok(Encoding {
            h: Arc::new(g.value(h_f).clone()),
            init: init
                .iter()
                .map(|s| RecurrentState::from_nodes(&g, s))
                .collect(),
        })
    }

    pub fn initial_state(&self, enc: &Encoding) -> DecState {
        DecState {
            layers: enc.init.clone(),
            context: self
                .scorer
                .is_some()
                .then(|| Tensor::zeros(self.config.enc_dim(), 1)),
            h_f: enc.h.clone(),
        }
    }

    pub fn decode_step(&self, state: &DecState, prev: TokenId) -> Result<StepOutput> {
        let mut g = Graph::new(&self.params);
        let h_f = g.input((*state.h_f).clone());
        let nodes: Vec<StateNodes> = state.layers.iter().map(|s| s.to_nodes(&mut g)).collect();
        let context = state.context.as_ref().map(|c| g.input(c.clone()));
        let step = self.step_nodes(&mut g, h_f, state.h_f.cols(), prev, &nodes, context)?;
        g.forward()?;
        Ok(StepOutput {
            log_probs: log_softmax_slice(g.value(step.scores).data()),
            state: DecState {
                layers: step
                    .states
                    .iter()
                    .map(|s| RecurrentState::from_nodes(&g, s))
                    .collect(),
                context: step.context.map(|c| g.value(c).clone()),
                h_f: state.h_f.clone(),
            },
            attention: step.alpha.map(|a| g.value(a).data().to_vec()),
        })
    }

    /// Unnormalized attention scores of decoder state `h_e` against every
    /// column of `h_f`, computed as one matrix operation or one column at a
    /// time.
    pub fn attention_scores(
        &self,
        h_f: &Tensor,
        h_e: &Tensor,
        per_column: bool,
    ) -> Result<Vec<f64>> {
        let scorer = self
            .scorer
            .as_ref()
            .ok_or_else(|| Error::Config("model has no attention".into()))?;
        let mut g = Graph::new(&self.params);
        let he = g.input(h_e.clone());
        let nodes = if per_column {
            (0..h_f.cols())
                .map(|j| {
                    let col = g.input(h_f.column(j));
                    scorer.score_one(&mut g, col, he)
                })
                .collect()
        } else {
            let hf = g.input(h_f.clone());
            vec![scorer.scores(&mut g, hf, he, h_f.cols())]
        };
        g.forward()?;
        Ok(nodes
            .iter()
            .flat_map(|&n| g.value(n).data().to_vec())
            .collect())
    }

    /// Per-example training with the shared epoch loop; dev defaults to the
    /// training pairs.
    pub fn train(
        &mut self,
        train: &[(Sentence, Sentence)],
        dev: Option<&[(Sentence, Sentence)]>,
        cfg: &NeuralTrainConfig,
    ) -> Result<Vec<EpochMetrics>> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let dev = dev.unwrap_or(train);
        train_units(self, train, cfg, |m| evaluate_conditional(m, dev))
    }
}

impl Trainable for EncDecModel {
    type Unit = (Sentence, Sentence);

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn unit_loss(&self, g: &mut Graph<'_>, unit: &(Sentence, Sentence)) -> Result<(NodeId, f64)> {
        Ok((self.loss_node(g, &unit.0, &unit.1)?, unit.1.len() as f64))
    }
}

impl StepModel for EncDecModel {
    type State = DecState;

    fn vocab_size(&self) -> usize {
        self.tgt_vocab.len()
    }

    fn start(&self, source: Option<&[TokenId]>) -> Result<DecState> {
        let src = source
            .ok_or_else(|| Error::Data("an encoder-decoder needs a source sentence".into()))?;
        Ok(self.initial_state(&self.encode(src)?))
    }

    fn step(&self, state: &DecState, prev: TokenId) -> Result<Step<DecState>> {
        let out = self.decode_step(state, prev)?;
        Ok(Step {
            log_probs: out.log_probs,
            state: out.state,
            attention: out.attention,
        })
    }
}

impl SentenceScorer for EncDecModel {
    fn target_vocab(&self) -> &Vocabulary {
        &self.tgt_vocab
    }

    fn score_target(
        &self,
        source: Option<&Sentence>,
        target: &Sentence,
    ) -> Result<Vec<TokenScore>> {
        let mut state = self.start(source.map(|s| s.ids()))?;
        score_tokens(&self.tgt_vocab, target, |prev| {
            let out = self.decode_step(&state, prev)?;
            state = out.state;
            Ok(out.log_probs)
        })
    }
}
