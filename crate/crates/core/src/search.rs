//! Output generation: ancestral sampling, greedy search, beam search with
//! length corrections, and attention-based unknown-word replacement.
//!
//! Search runs over any [`StepModel`], a model that maps a decoder state and
//! the previous token to a distribution over the next token.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use crate::corpus::{TokenId, Vocabulary, BOS, EOS, UNK};
use crate::error::{Error, Result};

/// One decoding step's output.
#[derive(Clone, Debug)]
pub struct Step<S> {
    /// Natural-log probabilities over the vocabulary.
    pub log_probs: Vec<f64>,
    pub state: S,
    /// Attention weights over source positions, for attentional models.
    pub attention: Option<Vec<f64>>,
}

impl<S> Step<S> {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }
}

pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    fn bos(&self) -> TokenId {
        BOS
    }

    fn eos(&self) -> TokenId {
        EOS
    }

    /// Decoder state before the first token, given the source sentence for
    /// conditional models.
    fn start(&self, source: Option<&[TokenId]>) -> Result<Self::State>;

    fn step(&self, state: &Self::State, prev: TokenId) -> Result<Step<Self::State>>;
}

impl<M: StepModel + ?Sized> StepModel for &M {
    type State = M::State;

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn bos(&self) -> TokenId {
        (**self).bos()
    }

    fn eos(&self) -> TokenId {
        (**self).eos()
    }

    fn start(&self, source: Option<&[TokenId]>) -> Result<Self::State> {
        (**self).start(source)
    }

    fn step(&self, state: &Self::State, prev: TokenId) -> Result<Step<Self::State>> {
        (**self).step(state, prev)
    }
}

/// Partial or complete output during search.
#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub state: S,
    pub finished: bool,
    /// Per-step argmax of the attention vector (attentional models only).
    pub attention_trace: Option<Vec<usize>>,
}

impl<S: Clone> Hypothesis<S> {
    fn root(state: S) -> Self {
        Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            state,
            finished: false,
            attention_trace: None,
        }
    }

    fn extend(
        &self,
        token: TokenId,
        logp: f64,
        state: S,
        attention: Option<&[f64]>,
        eos: TokenId,
    ) -> Self {
        debug_assert!(!self.finished, "finished hypotheses are never extended");
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        let attention_trace = attention.map(|a| {
            let mut trace = self.attention_trace.clone().unwrap_or_default();
            trace.push(crate::tensor::argmax(a));
            trace
        });
        Hypothesis {
            tokens,
            logprob: self.logprob + logp,
            state,
            finished: token == eos,
            attention_trace,
        }
    }

    fn last(&self, bos: TokenId) -> TokenId {
        self.tokens.last().copied().unwrap_or(bos)
    }
}

/// A finished (or truncated) search output.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Output tokens, ending in EOS unless truncated.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    /// Ranking score after the length correction.
    pub score: f64,
    pub truncated: bool,
    pub attention_trace: Option<Vec<usize>>,
}

impl SearchResult {
    fn from_hyp<S>(h: Hypothesis<S>, score: f64) -> Self {
        SearchResult {
            truncated: !h.finished,
            tokens: h.tokens,
            logprob: h.logprob,
            score,
            attention_trace: h.attention_trace,
        }
    }

    /// Output length without the final EOS.
    pub fn length(&self) -> usize {
        self.tokens.len() - usize::from(!self.truncated)
    }
}

pub fn default_max_len(source_len: Option<usize>) -> usize {
    match source_len {
        Some(n) => 2 * n + 10,
        None => 100,
    }
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len == 0 {
        Err(Error::Config("max_len must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Ancestral sampling: draw each token from the model's distribution.
pub fn sample<M: StepModel, R: Rng + ?Sized>(
    model: &M,
    source: Option<&[TokenId]>,
    rng: &mut R,
    max_len: usize,
) -> Result<SearchResult> {
    check_max_len(max_len)?;
    let mut hyp = Hypothesis::root(model.start(source)?);
    while hyp.tokens.len() < max_len && !hyp.finished {
        let step = model.step(&hyp.state, hyp.last(model.bos()))?;
        let u: f64 = rng.gen();
        let mut cumulative = 0.0;
        let mut choice = step.log_probs.len() - 1;
        for (tok, lp) in step.log_probs.iter().enumerate() {
            cumulative += lp.exp();
            if u < cumulative {
                choice = tok;
                break;
            }
        }
        hyp = hyp.extend(
            choice,
            step.log_probs[choice],
            step.state,
            step.attention.as_deref(),
            model.eos(),
        );
    }
    let score = hyp.logprob;
    Ok(SearchResult::from_hyp(hyp, score))
}

/// Greedy 1-best search; ties go to the lowest token id.
pub fn greedy<M: StepModel>(
    model: &M,
    source: Option<&[TokenId]>,
    max_len: usize,
) -> Result<SearchResult> {
    check_max_len(max_len)?;
    let mut hyp = Hypothesis::root(model.start(source)?);
    while hyp.tokens.len() < max_len && !hyp.finished {
        let step = model.step(&hyp.state, hyp.last(model.bos()))?;
        let best = crate::tensor::argmax(&step.log_probs);
        hyp = hyp.extend(
            best,
            step.log_probs[best],
            step.state,
            step.attention.as_deref(),
            model.eos(),
        );
    }
    let score = hyp.logprob;
    Ok(SearchResult::from_hyp(hyp, score))
}

/// Multinomial prior over output length given input length, estimated from
/// training-pair lengths (both counted without EOS).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LengthPrior {
    joint: HashMap<(usize, usize), u64>,
    source: HashMap<usize, u64>,
}

/// Probability floor for length pairs never seen in training.
pub const LENGTH_PRIOR_FLOOR: f64 = 1e-9;

impl LengthPrior {
    /// Fit from `(source_len, target_len)` pairs.
    pub fn fit(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut prior = LengthPrior::default();
        for (f, e) in pairs {
            *prior.joint.entry((e, f)).or_insert(0) += 1;
            *prior.source.entry(f).or_insert(0) += 1;
        }
        prior
    }

    /// `P(|E| | |F|) = c(|E|, |F|) / c(|F|)`, floored.
    pub fn prob(&self, target_len: usize, source_len: usize) -> f64 {
        let denom = self.source.get(&source_len).copied().unwrap_or(0);
        let num = self
            .joint
            .get(&(target_len, source_len))
            .copied()
            .unwrap_or(0);
        if denom == 0 {
            return LENGTH_PRIOR_FLOOR;
        }
        (num as f64 / denom as f64).max(LENGTH_PRIOR_FLOOR)
    }

    pub fn entries(&self) -> Vec<((usize, usize), u64)> {
        let mut v: Vec<_> = self.joint.iter().map(|(&k, &c)| (k, c)).collect();
        v.sort();
        v
    }

    pub fn from_entries(entries: &[((usize, usize), u64)]) -> Self {
        let mut prior = LengthPrior::default();
        for &((e, f), c) in entries {
            *prior.joint.entry((e, f)).or_insert(0) += c;
            *prior.source.entry(f).or_insert(0) += c;
        }
        prior
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub enum LengthNorm {
    #[default]
    None,
    MultinomialPrior(LengthPrior),
    /// Average log probability per output token (EOS included).
    PerWord,
}

impl LengthNorm {
    pub fn rescore(
        &self,
        logprob: f64,
        tokens: usize,
        output_len: usize,
        source_len: usize,
    ) -> f64 {
        match self {
            LengthNorm::None => logprob,
            LengthNorm::MultinomialPrior(prior) => {
                prior.prob(output_len, source_len).ln() + logprob
            }
            LengthNorm::PerWord => logprob / tokens.max(1) as f64,
        }
    }
}

/// Names accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LengthNormKind {
    None,
    Prior,
    PerWord,
}

impl FromStr for LengthNormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LengthNormKind::None),
            "prior" => Ok(LengthNormKind::Prior),
            "perword" | "per_word" => Ok(LengthNormKind::PerWord),
            other => Err(Error::Config(format!(
                "unknown length normalization {other:?}"
            ))),
        }
    }
}

/// Beam search keeping `beam` hypotheses per step. Hypotheses that emit EOS
/// move to a completed pool; search stops once `beam` hypotheses are
/// complete, nothing is left to expand, or `max_len` is reached. The `beam`
/// most probable completions are kept and then ranked by `length_norm`,
/// best first. If nothing completes, the best unfinished
/// hypothesis is returned with `truncated` set.
pub fn beam_search<M: StepModel>(
    model: &M,
    source: Option<&[TokenId]>,
    beam: usize,
    max_len: usize,
    length_norm: &LengthNorm,
) -> Result<Vec<SearchResult>> {
    if beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    check_max_len(max_len)?;
    let source_len = source.map(|s| s.len()).unwrap_or(0);
    let eos = model.eos();
    let mut active = vec![Hypothesis::root(model.start(source)?)];
    let mut completed: Vec<Hypothesis<M::State>> = Vec::new();

    for _ in 0..max_len {
        let mut steps = Vec::with_capacity(active.len());
        let mut candidates: Vec<(f64, usize, TokenId)> = Vec::new();
        for (rank, h) in active.iter().enumerate() {
            let step = model.step(&h.state, h.last(model.bos()))?;
            for (tok, &lp) in step.log_probs.iter().enumerate() {
                candidates.push((h.logprob + lp, rank, tok));
            }
            steps.push(step);
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
        let mut next = Vec::with_capacity(beam);
        for &(_, rank, tok) in candidates.iter().take(beam) {
            let step = &steps[rank];
            let h = active[rank].extend(
                tok,
                step.log_probs[tok],
                step.state.clone(),
                step.attention.as_deref(),
                eos,
            );
            if h.finished {
                completed.push(h);
            } else {
                next.push(h);
            }
        }
        active = next;
        if completed.len() >= beam || active.is_empty() {
            break;
        }
    }

    if completed.is_empty() {
        let best = active
            .into_iter()
            .next()
            .expect("beam keeps at least one hypothesis when none completed");
        let score = best.logprob;
        return Ok(vec![SearchResult::from_hyp(best, score)]);
    }

    // The candidate set is fixed by raw log probability so that the length
    // correction only reorders it.
    completed.sort_by(|a, b| {
        b.logprob
            .total_cmp(&a.logprob)
            .then(a.tokens.len().cmp(&b.tokens.len()))
            .then(a.tokens.cmp(&b.tokens))
    });
    completed.truncate(beam);
    let mut results: Vec<SearchResult> = completed
        .into_iter()
        .map(|h| {
            let score =
                length_norm.rescore(h.logprob, h.tokens.len(), h.tokens.len() - 1, source_len);
            SearchResult::from_hyp(h, score)
        })
        .collect();
    results.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.tokens.len().cmp(&b.tokens.len()))
            .then(a.tokens.cmp(&b.tokens))
    });
    Ok(results)
}

/// Replace every UNK in the output with the source word that received the
/// most attention at that step.
pub fn replace_unknowns<S: AsRef<str>>(
    result: &SearchResult,
    source_words: &[S],
    vocab: &Vocabulary,
) -> Result<Vec<String>> {
    let trace = result.attention_trace.as_ref().ok_or_else(|| {
        Error::Config("unknown-word replacement needs an attentional model".into())
    })?;
    let body = if result.truncated {
        &result.tokens[..]
    } else {
        &result.tokens[..result.tokens.len() - 1]
    };
    body.iter()
        .enumerate()
        .map(|(t, &tok)| {
            if tok == UNK {
                let j = trace[t];
                source_words
                    .get(j)
                    .map(|w| w.as_ref().to_string())
                    .ok_or_else(|| Error::Data(format!("attention index {j} outside the source")))
            } else {
                Ok(vocab.token(tok).to_string())
            }
        })
        .collect()
}

/// n-best list for input sentence `index`, one `index ||| tokens ||| score`
/// line per hypothesis, best first.
pub fn format_nbest(
    index: usize,
    results: &[SearchResult],
    mut render: impl FnMut(&SearchResult) -> Result<String>,
) -> Result<String> {
    let mut out = String::new();
    for r in results {
        let _ = writeln!(out, "{} ||| {} ||| {}", index, render(r)?, r.score);
    }
    Ok(out)
}
