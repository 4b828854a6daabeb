//! Count-based n-gram language model with maximum-likelihood estimates,
//! fixed-weight recursive interpolation, and a uniform distribution over the
//! full vocabulary as the order-0 base for unknown words.

use std::collections::HashMap;

use crate::corpus::{Sentence, TokenId, Vocabulary, BOS, UNK};
use crate::error::{Error, Result};
use crate::eval::{SentenceScorer, TokenScore};
use crate::search::{Step, StepModel};

pub const DEFAULT_ALPHA: f64 = 0.1;

/// Counts of every m-gram (m = 1..=n) ending at a predicted position, plus
/// the derived counts of each history used as a conditioning context.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramCountTable {
    n: usize,
    counts: HashMap<Vec<TokenId>, u64>,
    context_counts: HashMap<Vec<TokenId>, u64>,
}

/// The history of length `len` before position `t` of `ids`, padded with BOS.
pub(crate) fn history(ids: &[TokenId], t: usize, len: usize) -> Vec<TokenId> {
    (0..len)
        .map(|k| {
            let back = len - k;
            if t >= back {
                ids[t - back]
            } else {
                BOS
            }
        })
        .collect()
}

impl NGramCountTable {
    pub fn train(corpus: &[Sentence], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        let mut counts: HashMap<Vec<TokenId>, u64> = HashMap::new();
        for sentence in corpus {
            for t in 0..sentence.len() {
                let full = history(sentence, t, n - 1);
                for m in 1..=n {
                    let mut key = full[n - m..].to_vec();
                    key.push(sentence[t]);
                    *counts.entry(key).or_insert(0) += 1;
                }
            }
        }
        Self::from_counts(n, counts)
    }

    /// Rebuild from stored m-gram counts; context counts are re-derived.
    pub fn from_counts(n: usize, counts: HashMap<Vec<TokenId>, u64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        let mut context_counts: HashMap<Vec<TokenId>, u64> = HashMap::new();
        for (key, &c) in &counts {
            if key.is_empty() || key.len() > n || c == 0 {
                return Err(Error::Format(format!(
                    "invalid n-gram record {key:?} -> {c}"
                )));
            }
            *context_counts
                .entry(key[..key.len() - 1].to_vec())
                .or_insert(0) += c;
        }
        Ok(NGramCountTable {
            n,
            counts,
            context_counts,
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn count(&self, ngram: &[TokenId]) -> u64 {
        self.counts.get(ngram).copied().unwrap_or(0)
    }

    /// Number of times `context` preceded a predicted token.
    pub fn context_count(&self, context: &[TokenId]) -> u64 {
        self.context_counts.get(context).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.context_count(&[])
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Entries sorted by (length, ids) for deterministic serialization.
    pub fn sorted_entries(&self) -> Vec<(&[TokenId], u64)> {
        let mut entries: Vec<_> = self
            .counts
            .iter()
            .map(|(k, &c)| (k.as_slice(), c))
            .collect();
        entries.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(b.0)));
        entries
    }

    /// Maximum-likelihood `P(token | context)`; `context.len() + 1` is the order.
    pub fn mle_prob(&self, context: &[TokenId], token: TokenId) -> MleEstimate {
        let denom = self.context_count(context);
        if denom == 0 {
            return MleEstimate {
                prob: 0.0,
                context_seen: false,
            };
        }
        let mut key = context.to_vec();
        key.push(token);
        MleEstimate {
            prob: self.count(&key) as f64 / denom as f64,
            context_seen: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleEstimate {
    pub prob: f64,
    pub context_seen: bool,
}

/// Interpolated probability together with the product of the effective
/// hold-out weights along the recursion, which scales the uniform base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interpolated {
    pub prob: f64,
    pub unknown_weight: f64,
}

#[derive(Clone, Debug)]
pub struct NGramLm {
    table: NGramCountTable,
    alpha: Vec<f64>,
    vocab: Vocabulary,
}

impl NGramLm {
    pub fn new(table: NGramCountTable, alpha: Vec<f64>, vocab: Vocabulary) -> Result<Self> {
        if alpha.len() != table.order() {
            return Err(Error::Config(format!(
                "expected {} interpolation weights, got {}",
                table.order(),
                alpha.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Config(format!(
                "interpolation weight {a} outside [0, 1]"
            )));
        }
        Ok(NGramLm {
            table,
            alpha,
            vocab,
        })
    }

    pub fn train(
        corpus: &[Sentence],
        vocab: Vocabulary,
        n: usize,
        alpha: Vec<f64>,
    ) -> Result<Self> {
        let table = NGramCountTable::train(corpus, n)?;
        Self::new(table, alpha, vocab)
    }

    pub fn order(&self) -> usize {
        self.table.order()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn table(&self) -> &NGramCountTable {
        &self.table
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// `P(token | context)` by recursive interpolation down to the uniform
    /// unknown-word distribution. `context` must hold exactly `n − 1` ids
    /// (BOS-padded). A context never seen at some order passes the full
    /// lower-order estimate through.
    pub fn interp(&self, context: &[TokenId], token: TokenId) -> Result<Interpolated> {
        let n = self.order();
        if context.len() != n - 1 {
            return Err(Error::Config(format!(
                "order-{n} model needs a context of {} tokens, got {}",
                n - 1,
                context.len()
            )));
        }
        let mut prob = 1.0 / self.vocab.v_all() as f64;
        let mut unknown_weight = 1.0;
        for m in 1..=n {
            let ctx = &context[context.len() - (m - 1)..];
            let mle = self.table.mle_prob(ctx, token);
            if mle.context_seen {
                let a = self.alpha[m - 1];
                prob = (1.0 - a) * mle.prob + a * prob;
                unknown_weight *= a;
            }
        }
        Ok(Interpolated {
            prob,
            unknown_weight,
        })
    }

    pub fn interp_prob(&self, context: &[TokenId], token: TokenId) -> Result<f64> {
        Ok(self.interp(context, token)?.prob)
    }

    /// Probability mass reserved for words outside `V \ {UNK}`.
    pub fn unknown_mass(&self, context: &[TokenId]) -> Result<f64> {
        let w = self.interp(context, UNK)?.unknown_weight;
        let v_all = self.vocab.v_all() as f64;
        Ok(w * (v_all - (self.vocab.len() - 1) as f64) / v_all)
    }

    pub fn context_at(&self, sentence: &[TokenId], t: usize) -> Vec<TokenId> {
        history(sentence, t, self.order() - 1)
    }

    /// Natural-log probability of an EOS-terminated sentence.
    pub fn sentence_logprob(&self, sentence: &Sentence) -> Result<f64> {
        Ok(self
            .score_target(None, sentence)?
            .iter()
            .map(|s| s.logprob)
            .sum())
    }
}

impl SentenceScorer for NGramLm {
    fn target_vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score_target(
        &self,
        _source: Option<&Sentence>,
        target: &Sentence,
    ) -> Result<Vec<TokenScore>> {
        let unk_factor = -(self.vocab.v_all() as f64).ln();
        (0..target.len())
            .map(|t| {
                let token = target[t];
                let p = self.interp_prob(&self.context_at(target, t), token)?;
                Ok(TokenScore {
                    logprob: p.ln(),
                    unk_factor: if token == UNK { unk_factor } else { 0.0 },
                })
            })
            .collect()
    }
}

/// Next-token distribution for generation: the unknown mass goes to UNK
/// and BOS is never generated.
impl StepModel for NGramLm {
    type State = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn start(&self, _source: Option<&[TokenId]>) -> Result<Vec<TokenId>> {
        Ok(Vec::new())
    }

    /// The state is the output so far.
    fn step(&self, state: &Vec<TokenId>, prev: TokenId) -> Result<Step<Vec<TokenId>>> {
        let mut out = state.clone();
        if prev != BOS {
            out.push(prev);
        }
        let ctx = self.context_at(&out, out.len());
        let mut p = (0..self.vocab.len())
            .map(|t| self.interp_prob(&ctx, t))
            .collect::<Result<Vec<f64>>>()?;
        p[BOS] = 0.0;
        p[UNK] = self.unknown_mass(&ctx)?;
        let z: f64 = p.iter().sum();
        Ok(Step {
            log_probs: p.iter().map(|x| (x / z).ln()).collect(),
            state: out,
            attention: None,
        })
    }
}
