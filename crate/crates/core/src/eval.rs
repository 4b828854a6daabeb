//! Likelihood, perplexity and corpus BLEU.

use std::collections::HashMap;
use std::fmt;

use crate::corpus::{Sentence, Vocabulary};
use crate::error::{Error, Result};

/// Log probability of one target token. `logprob` already includes
/// `unk_factor`, the log of the uniform unknown-word factor (zero for
/// in-vocabulary tokens).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenScore {
    pub logprob: f64,
    pub unk_factor: f64,
}

/// Anything that assigns per-token log probabilities to a target sentence,
/// optionally conditioned on a source sentence.
pub trait SentenceScorer {
    fn target_vocab(&self) -> &Vocabulary;

    fn score_target(&self, source: Option<&Sentence>, target: &Sentence)
        -> Result<Vec<TokenScore>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub total_log_likelihood: f64,
    pub word_count: usize,
    pub per_word_ll: f64,
    pub perplexity: f64,
    pub unk_count: usize,
    pub unk_log_portion: f64,
}

impl EvalReport {
    fn from_scores(mut scores: Vec<TokenScore>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Data("nothing to evaluate".into()));
        }
        // summing in sorted order makes the totals independent of sentence order
        scores.sort_by(|a, b| {
            a.logprob
                .total_cmp(&b.logprob)
                .then(a.unk_factor.total_cmp(&b.unk_factor))
        });
        let total: f64 = scores.iter().map(|s| s.logprob).sum();
        let unk_log_portion: f64 = scores.iter().map(|s| s.unk_factor).sum();
        let unk_count = scores.iter().filter(|s| s.unk_factor != 0.0).count();
        let word_count = scores.len();
        let per_word_ll = total / word_count as f64;
        Ok(EvalReport {
            total_log_likelihood: total,
            word_count,
            per_word_ll,
            perplexity: (-per_word_ll).exp(),
            unk_count,
            unk_log_portion,
        })
    }

    pub fn to_tsv(&self) -> String {
        self.to_string()
    }

    /// Parse the `key<TAB>value` form written by `Display`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for line in text.lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("malformed report line {line:?}")))?;
            map.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::Data(format!("report is missing {k}")))
        };
        let float = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("bad value for {k}")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("bad value for {k}")))
        };
        Ok(EvalReport {
            total_log_likelihood: float("total_log_likelihood")?,
            word_count: int("word_count")?,
            per_word_ll: float("per_word_ll")?,
            perplexity: float("perplexity")?,
            unk_count: int("unk_count")?,
            unk_log_portion: float("unk_log_portion")?,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# natural log; word_count includes one ⟨/s⟩ per sentence"
        )?;
        writeln!(f, "total_log_likelihood\t{}", self.total_log_likelihood)?;
        writeln!(f, "word_count\t{}", self.word_count)?;
        writeln!(f, "per_word_ll\t{}", self.per_word_ll)?;
        writeln!(f, "perplexity\t{}", self.perplexity)?;
        writeln!(f, "unk_count\t{}", self.unk_count)?;
        writeln!(f, "unk_log_portion\t{}", self.unk_log_portion)
    }
}

/// Evaluate an unconditional language model on EOS-terminated sentences.
pub fn evaluate_lm<M: SentenceScorer + ?Sized>(model: &M, data: &[Sentence]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("empty evaluation data".into()));
    }
    let mut scores = Vec::new();
    for s in data {
        scores.extend(model.score_target(None, s)?);
    }
    EvalReport::from_scores(scores)
}

/// Evaluate a conditional model on (source, target) pairs.
pub fn evaluate_conditional<M: SentenceScorer + ?Sized>(
    model: &M,
    data: &[(Sentence, Sentence)],
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("empty evaluation data".into()));
    }
    let mut scores = Vec::new();
    for (f, e) in data {
        scores.extend(model.score_target(Some(f), e)?);
    }
    EvalReport::from_scores(scores)
}

/// One line of a training metrics file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-token training loss over the epoch.
    pub train_loss: f64,
    pub dev_ll: f64,
    pub dev_ppl: f64,
}

impl EpochMetrics {
    pub fn new(epoch: usize, train_loss: f64, dev: &EvalReport) -> Self {
        EpochMetrics {
            epoch,
            train_loss,
            dev_ll: dev.total_log_likelihood,
            dev_ppl: dev.perplexity,
        }
    }
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.epoch, self.train_loss, self.dev_ll, self.dev_ppl
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub bleu: f64,
    pub hyp_length: usize,
    pub ref_length: usize,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bleu\t{}", self.bleu)?;
        for (i, p) in self.precisions.iter().enumerate() {
            writeln!(f, "p{}\t{}", i + 1, p)?;
        }
        writeln!(f, "brevity_penalty\t{}", self.brevity_penalty)?;
        writeln!(f, "hyp_length\t{}", self.hyp_length)?;
        writeln!(f, "ref_length\t{}", self.ref_length)
    }
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with clipped n-gram precisions pooled over all
/// sentences, one reference per hypothesis, and no smoothing.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(
    hypotheses: &[S],
    references: &[T],
    max_n: usize,
) -> Result<BleuReport> {
    if hypotheses.is_empty() {
        return Err(Error::Data("no hypotheses".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Data(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Config("max_n must be at least 1".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut hyp_length, mut ref_length) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        hyp_length += h.len();
        ref_length += r.len();
        for n in 1..=max_n {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            for (gram, c) in hc {
                matched[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    let precisions: Vec<f64> = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let brevity_penalty = if hyp_length == 0 {
        0.0
    } else {
        (1.0 - ref_length as f64 / hyp_length as f64).exp().min(1.0)
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        precisions,
        brevity_penalty,
        bleu,
        hyp_length,
        ref_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Vocabulary, EOS, UNK};

    struct Uniform {
        vocab: Vocabulary,
    }

    impl SentenceScorer for Uniform {
        fn target_vocab(&self) -> &Vocabulary {
            &self.vocab
        }

        fn score_target(&self, _: Option<&Sentence>, target: &Sentence) -> Result<Vec<TokenScore>> {
            let unk = -(self.vocab.v_all() as f64).ln();
            Ok(target
                .iter()
                .map(|&t| {
                    let f = if t == UNK { unk } else { 0.0 };
                    TokenScore {
                        logprob: -(self.vocab.len() as f64).ln() + f,
                        unk_factor: f,
                    }
                })
                .collect())
        }
    }

    fn uniform10() -> Uniform {
        let words: Vec<String> = (0..7).map(|i| format!("w{i}")).collect();
        Uniform {
            vocab: Vocabulary::from_tokens(&words).unwrap(),
        }
    }

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let m = uniform10();
        let data = vec![Sentence(vec![3, 4, 5, EOS]), Sentence(vec![6, 7, EOS])];
        let r = evaluate_lm(&m, &data).unwrap();
        assert_eq!(r.word_count, 7);
        assert!((r.per_word_ll + 10f64.ln()).abs() < 1e-12);
        assert!((r.perplexity - 10.0).abs() < 1e-9);
        assert_eq!(r.unk_count, 0);
        assert_eq!(r.unk_log_portion, 0.0);
    }

    #[test]
    fn unk_portion_partition() {
        let m = uniform10();
        let data = vec![Sentence(vec![3, UNK, EOS]), Sentence(vec![UNK, EOS])];
        let r = evaluate_lm(&m, &data).unwrap();
        assert_eq!(r.unk_count, 2);
        let without = -5.0 * 10f64.ln();
        assert!((r.total_log_likelihood - r.unk_log_portion - without).abs() < 1e-10);
        assert!(r.unk_log_portion < 0.0);
    }

    #[test]
    fn additive_over_sentences() {
        let m = uniform10();
        let a = Sentence(vec![3, 4, EOS]);
        let b = Sentence(vec![UNK, 9, 9, EOS]);
        let both = evaluate_lm(&m, &[a.clone(), b.clone()]).unwrap();
        let sa = evaluate_lm(&m, &[a]).unwrap();
        let sb = evaluate_lm(&m, &[b]).unwrap();
        assert!(
            (both.total_log_likelihood - sa.total_log_likelihood - sb.total_log_likelihood).abs()
                < 1e-12
        );
    }

    #[test]
    fn empty_data_is_an_error() {
        assert!(evaluate_lm(&uniform10(), &[]).is_err());
    }

    #[test]
    fn report_round_trips_through_text() {
        let m = uniform10();
        let r = evaluate_lm(&m, &[Sentence(vec![3, UNK, EOS])]).unwrap();
        let text = r.to_string();
        assert!(text.contains("perplexity\t"));
        assert_eq!(EvalReport::parse(&text).unwrap(), r);
    }

    #[test]
    fn bleu_identical() {
        let h = ["the cat sat on the mat", "a b c d e"];
        let r = bleu(&h, &h, 4).unwrap();
        assert_eq!(r.bleu, 1.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn bleu_missing_fourgrams() {
        let r = bleu(&["the cat sat on the mat"], &["the cat is on the mat"], 4).unwrap();
        assert_eq!(r.precisions, vec![5.0 / 6.0, 3.0 / 5.0, 1.0 / 4.0, 0.0]);
        assert_eq!(r.bleu, 0.0);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let r = bleu(&["the cat is on"], &["the cat is on the mat"], 4).unwrap();
        assert!(r.precisions.iter().all(|&p| p == 1.0));
        assert!((r.brevity_penalty - (-0.5f64).exp()).abs() < 1e-15);
        assert!((r.bleu - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn bleu_errors() {
        let empty: [&str; 0] = [];
        assert!(bleu(&empty, &empty, 4).is_err());
        assert!(bleu(&["a"], &["a", "b"], 4).is_err());
    }
}
