//! Log-linear language model over sparse context features, trained with
//! closed-form gradients and per-example SGD.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::corpus::{Sentence, TokenId, Vocabulary, BOS, UNK};
use crate::error::{Error, Result};
use crate::eval::{evaluate_lm, EpochMetrics, SentenceScorer, TokenScore};
use crate::search::{Step, StepModel};
use crate::tensor::Tensor;
use crate::train::{check_finite, seeded_rng, DevOutcome, DevTracker, Schedule};

/// Upper bound on a single example's loss.
const LOSS_CAP: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    PrevWord,
    Prev2Words,
    /// One-hot over the observed `k`-character suffixes of the previous word.
    Suffix(usize),
    BagOfWords,
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prev_word" => Ok(Template::PrevWord),
            "prev2_words" => Ok(Template::Prev2Words),
            "bag_of_words" => Ok(Template::BagOfWords),
            other => other
                .strip_prefix("suffix_")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(Template::Suffix)
                .ok_or_else(|| Error::Config(format!("unknown feature template {other:?}"))),
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Template::PrevWord => f.write_str("prev_word"),
            Template::Prev2Words => f.write_str("prev2_words"),
            Template::Suffix(k) => write!(f, "suffix_{k}"),
            Template::BagOfWords => f.write_str("bag_of_words"),
        }
    }
}

pub fn parse_templates(descriptor: &str) -> Result<Vec<Template>> {
    let templates: Vec<Template> = descriptor
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if templates.is_empty() {
        return Err(Error::Config("no feature templates given".into()));
    }
    Ok(templates)
}

pub fn templates_descriptor(templates: &[Template]) -> String {
    templates
        .iter()
        .map(Template::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Sparse feature vector; `active` is sorted by index with unique indices.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub active: Vec<(usize, f64)>,
    pub dim: usize,
}

impl FeatureVector {
    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.dim, 1);
        for &(j, v) in &self.active {
            t.set(j, 0, v);
        }
        t
    }
}

fn suffix(word: &str, k: usize) -> &str {
    let start = word
        .char_indices()
        .rev()
        .nth(k - 1)
        .map(|(i, _)| i)
        .unwrap_or(0);
    &word[start..]
}

/// Maps a word history to feature indices. Blocks are laid out in template
/// order; suffix blocks index the suffixes of vocabulary words in
/// vocabulary order.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    templates: Vec<Template>,
    vocab_size: usize,
    offsets: Vec<usize>,
    suffix_ids: Vec<HashMap<String, usize>>,
    dim: usize,
    vocab_tokens: Vec<String>,
}

impl FeatureExtractor {
    pub fn new(templates: Vec<Template>, vocab: &Vocabulary) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Config("no feature templates given".into()));
        }
        let v = vocab.len();
        let mut offsets = Vec::new();
        let mut suffix_ids = Vec::new();
        let mut dim = 0;
        for t in &templates {
            offsets.push(dim);
            let mut registry = HashMap::new();
            dim += match t {
                Template::PrevWord | Template::BagOfWords => v,
                Template::Prev2Words => 2 * v,
                Template::Suffix(k) => {
                    for tok in vocab.tokens() {
                        let s = suffix(tok, *k).to_string();
                        let next = registry.len();
                        registry.entry(s).or_insert(next);
                    }
                    registry.len()
                }
            };
            suffix_ids.push(registry);
        }
        Ok(FeatureExtractor {
            templates,
            vocab_size: v,
            offsets,
            suffix_ids,
            dim,
            vocab_tokens: vocab.tokens().to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    /// Features of the history `prior` (all words before the predicted
    /// position, without padding; BOS is implied).
    pub fn featurize(&self, prior: &[TokenId]) -> FeatureVector {
        let back = |k: usize| -> TokenId {
            if prior.len() >= k {
                prior[prior.len() - k]
            } else {
                BOS
            }
        };
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for (i, t) in self.templates.iter().enumerate() {
            let off = self.offsets[i];
            match t {
                Template::PrevWord => *acc.entry(off + back(1)).or_insert(0.0) += 1.0,
                Template::Prev2Words => {
                    *acc.entry(off + back(1)).or_insert(0.0) += 1.0;
                    *acc.entry(off + self.vocab_size + back(2)).or_insert(0.0) += 1.0;
                }
                Template::Suffix(k) => {
                    let word = &self.vocab_tokens[back(1)];
                    if let Some(&j) = self.suffix_ids[i].get(suffix(word, *k)) {
                        *acc.entry(off + j).or_insert(0.0) += 1.0;
                    }
                }
                Template::BagOfWords => {
                    for &w in prior {
                        *acc.entry(off + w).or_insert(0.0) += 1.0;
                    }
                }
            }
        }
        let mut active: Vec<(usize, f64)> = acc.into_iter().collect();
        active.sort_by_key(|&(j, _)| j);
        FeatureVector {
            active,
            dim: self.dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogLinearParams {
    /// `|V| × N`.
    pub w: Tensor,
    /// `|V| × 1`.
    pub b: Tensor,
}

impl LogLinearParams {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        LogLinearParams {
            w: Tensor::zeros(vocab_size, dim),
            b: Tensor::zeros(vocab_size, 1),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.w.rows()
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }

    pub fn all_finite(&self) -> bool {
        self.w.all_finite() && self.b.all_finite()
    }
}

/// `s = W x + b`, summing only the columns of active features.
pub fn score(params: &LogLinearParams, x: &FeatureVector) -> Result<Vec<f64>> {
    if x.dim != params.dim() {
        return Err(Error::Config(format!(
            "feature dimension {} does not match parameter dimension {}",
            x.dim,
            params.dim()
        )));
    }
    let mut s = params.b.data().to_vec();
    for &(j, v) in &x.active {
        for (r, sr) in s.iter_mut().enumerate() {
            *sr += params.w.get(r, j) * v;
        }
    }
    Ok(s)
}

pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Divergence("NaN score in softmax".into()));
    }
    Ok(crate::tensor::softmax_slice(scores))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_b: Vec<f64>,
    /// `(feature index, gradient column)` for each active feature.
    pub grad_w_cols: Vec<(usize, Vec<f64>)>,
}

/// Negative log likelihood of `target` and its gradients.
pub fn loss_and_grad(
    params: &LogLinearParams,
    x: &FeatureVector,
    target: TokenId,
) -> Result<LossGrad> {
    if target >= params.vocab_size() {
        return Err(Error::Config(format!("target id {target} out of range")));
    }
    let s = score(params, x)?;
    let p = softmax(&s)?;
    let loss = (crate::tensor::log_sum_exp(&s) - s[target]).min(LOSS_CAP);
    check_finite(loss, "log-linear example")?;
    let mut grad_b = p;
    grad_b[target] -= 1.0;
    let grad_w_cols = x
        .active
        .iter()
        .map(|&(j, v)| (j, grad_b.iter().map(|g| g * v).collect()))
        .collect();
    Ok(LossGrad {
        loss,
        grad_b,
        grad_w_cols,
    })
}

#[derive(Clone, Debug)]
pub struct LogLinearLm {
    vocab: Vocabulary,
    features: FeatureExtractor,
    pub params: LogLinearParams,
}

impl LogLinearLm {
    pub fn new(vocab: Vocabulary, templates: Vec<Template>) -> Result<Self> {
        let features = FeatureExtractor::new(templates, &vocab)?;
        let params = LogLinearParams::zeros(vocab.len(), features.dim());
        Ok(LogLinearLm {
            vocab,
            features,
            params,
        })
    }

    pub fn with_params(
        vocab: Vocabulary,
        templates: Vec<Template>,
        params: LogLinearParams,
    ) -> Result<Self> {
        let features = FeatureExtractor::new(templates, &vocab)?;
        if params.vocab_size() != vocab.len() || params.dim() != features.dim() {
            return Err(Error::Format(format!(
                "log-linear parameters are {}x{}, expected {}x{}",
                params.vocab_size(),
                params.dim(),
                vocab.len(),
                features.dim()
            )));
        }
        Ok(LogLinearLm {
            vocab,
            features,
            params,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn features(&self) -> &FeatureExtractor {
        &self.features
    }

    pub fn next_distribution(&self, prior: &[TokenId]) -> Result<Vec<f64>> {
        let x = self.features.featurize(prior);
        softmax(&score(&self.params, &x)?)
    }

    fn sgd_update(&mut self, g: &LossGrad, lr: f64) {
        for (r, gb) in g.grad_b.iter().enumerate() {
            self.params.b.add_at(r, 0, -lr * gb);
        }
        for (j, col) in &g.grad_w_cols {
            for (r, gw) in col.iter().enumerate() {
                self.params.w.add_at(r, *j, -lr * gw);
            }
        }
    }

    /// Per-example SGD over every position of every sentence. Returns one
    /// metrics record per completed epoch; when early stopping is on, the
    /// parameters left in place are those of the best dev epoch.
    pub fn train_sgd(
        &mut self,
        train: &[Sentence],
        dev: &[Sentence],
        schedule: &Schedule,
    ) -> Result<Vec<EpochMetrics>> {
        schedule.validate(true)?;
        let dev = if dev.is_empty() { train } else { dev };
        let mut rng = seeded_rng(schedule.seed);
        let mut lr = schedule.learning_rate;
        let mut tracker = DevTracker::default();
        let mut best = self.params.clone();
        let mut log = Vec::new();
        for epoch in 1..=schedule.epochs {
            let mut total_loss = 0.0;
            let mut tokens = 0usize;
            for i in schedule.epoch_order(train.len(), &mut rng) {
                let sentence = &train[i];
                for t in 0..sentence.len() {
                    let x = self.features.featurize(&sentence[..t]);
                    let g = loss_and_grad(&self.params, &x, sentence[t])?;
                    total_loss += g.loss;
                    tokens += 1;
                    if lr > 0.0 {
                        self.sgd_update(&g, lr);
                    }
                }
            }
            if !self.params.all_finite() {
                return Err(Error::Divergence(format!(
                    "epoch {epoch}: non-finite parameters"
                )));
            }
            let report = evaluate_lm(self, dev)?;
            let train_loss = total_loss / tokens.max(1) as f64;
            check_finite(train_loss, "log-linear epoch")?;
            log.push(EpochMetrics::new(epoch, train_loss, &report));
            match tracker.observe(report.total_log_likelihood) {
                DevOutcome::Improved => best = self.params.clone(),
                DevOutcome::Worse(bad) => {
                    if schedule.decay {
                        lr /= 2.0;
                    }
                    if schedule.early_stop && bad >= schedule.patience {
                        break;
                    }
                }
            }
        }
        if schedule.early_stop {
            self.params = best;
        }
        Ok(log)
    }
}

impl SentenceScorer for LogLinearLm {
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
                let x = self.features.featurize(&target[..t]);
                let s = score(&self.params, &x)?;
                let lp = s[target[t]] - crate::tensor::log_sum_exp(&s);
                let f = if target[t] == UNK { unk_factor } else { 0.0 };
                Ok(TokenScore {
                    logprob: lp + f,
                    unk_factor: f,
                })
            })
            .collect()
    }
}

impl StepModel for LogLinearLm {
    /// Tokens generated so far.
    type State = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn start(&self, _source: Option<&[TokenId]>) -> Result<Vec<TokenId>> {
        Ok(Vec::new())
    }

    fn step(&self, state: &Vec<TokenId>, prev: TokenId) -> Result<Step<Vec<TokenId>>> {
        let mut history = state.clone();
        if prev != BOS {
            history.push(prev);
        }
        let x = self.features.featurize(&history);
        let s = score(&self.params, &x)?;
        Ok(Step {
            log_probs: crate::tensor::log_softmax_slice(&s),
            state: history,
            attention: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOS;
    use crate::train::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn vocab10() -> Vocabulary {
        let words: Vec<String> = (0..7).map(|i| format!("w{i}")).collect();
        Vocabulary::from_tokens(&words).unwrap()
    }

    #[test]
    fn prev_word_one_hot() {
        let fx = FeatureExtractor::new(vec![Template::PrevWord], &vocab10()).unwrap();
        let x = fx.featurize(&[4, 7]);
        assert_eq!(x.active, vec![(7, 1.0)]);
        assert_eq!(x.dim, 10);
    }

    #[test]
    fn prev2_concatenates_blocks() {
        let fx = FeatureExtractor::new(vec![Template::Prev2Words], &vocab10()).unwrap();
        let x = fx.featurize(&[3, 7]);
        assert_eq!(x.active, vec![(7, 1.0), (13, 1.0)]);
        assert_eq!(x.dim, 20);
        // BOS padding at the sentence start
        assert_eq!(fx.featurize(&[]).active, vec![(BOS, 1.0), (10 + BOS, 1.0)]);
    }

    #[test]
    fn bag_of_words_sums() {
        let fx = FeatureExtractor::new(vec![Template::BagOfWords], &vocab10()).unwrap();
        assert_eq!(fx.featurize(&[3, 3, 4]).active, vec![(3, 2.0), (4, 1.0)]);
    }

    #[test]
    fn suffix_features() {
        let vocab = Vocabulary::from_tokens(&["walked", "talked", "run"]).unwrap();
        let fx = FeatureExtractor::new(vec![Template::Suffix(2)], &vocab).unwrap();
        let walked = fx.featurize(&[vocab.id("walked").unwrap()]);
        let talked = fx.featurize(&[vocab.id("talked").unwrap()]);
        let run = fx.featurize(&[vocab.id("run").unwrap()]);
        assert_eq!(walked.active, talked.active);
        assert_ne!(walked.active, run.active);
        assert_eq!(suffix("⟨s⟩", 2), "s⟩");
        assert_eq!(suffix("a", 3), "a");
    }

    #[test]
    fn template_names() {
        assert_eq!("suffix_3".parse::<Template>().unwrap(), Template::Suffix(3));
        assert!("trigram_magic".parse::<Template>().is_err());
        assert!("suffix_0".parse::<Template>().is_err());
        let t = parse_templates("prev2_words,suffix_2").unwrap();
        assert_eq!(templates_descriptor(&t), "prev2_words,suffix_2");
    }

    #[test]
    fn score_edge_cases() {
        let mut p = LogLinearParams::zeros(3, 4);
        p.b = Tensor::vector(&[1.0, 2.0, 3.0]);
        p.w.set(1, 2, 5.0);
        let empty = FeatureVector {
            active: vec![],
            dim: 4,
        };
        assert_eq!(score(&p, &empty).unwrap(), vec![1.0, 2.0, 3.0]);
        let one = FeatureVector {
            active: vec![(2, 1.0)],
            dim: 4,
        };
        assert_eq!(score(&p, &one).unwrap(), vec![1.0, 7.0, 3.0]);
        let wrong = FeatureVector {
            active: vec![],
            dim: 5,
        };
        assert!(score(&p, &wrong).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] >= 0.0);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn loss_and_grad_uniform() {
        let p = LogLinearParams::zeros(2, 1);
        let x = FeatureVector {
            active: vec![],
            dim: 1,
        };
        let g = loss_and_grad(&p, &x, 0).unwrap();
        assert_eq!(g.grad_b, vec![-0.5, 0.5]);
        assert!((g.loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_vanishes_for_confident_prediction() {
        let mut p = LogLinearParams::zeros(3, 1);
        p.b = Tensor::vector(&[50.0, 0.0, 0.0]);
        let x = FeatureVector {
            active: vec![],
            dim: 1,
        };
        let g = loss_and_grad(&p, &x, 0).unwrap();
        assert!(g.loss < 1e-20);
        assert!(g.grad_b.iter().all(|v| v.abs() < 1e-20));
    }

    fn random_instance(
        rng: &mut crate::train::Rng,
        v: usize,
        n: usize,
    ) -> (LogLinearParams, FeatureVector, TokenId) {
        let params = LogLinearParams {
            w: Tensor::uniform(v, n, 1.0, rng),
            b: Tensor::uniform(v, 1, 1.0, rng),
        };
        let mut active = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.4) {
                active.push((j, rng.gen_range(-2.0..2.0)));
            }
        }
        if active.is_empty() {
            active.push((0, 1.0));
        }
        let target = rng.gen_range(0..v);
        (params, FeatureVector { active, dim: n }, target)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(7);
        let (params, x, target) = random_instance(&mut rng, 5, 7);
        let g = loss_and_grad(&params, &x, target).unwrap();
        let h = 1e-5;
        let loss_at = |p: &LogLinearParams| loss_and_grad(p, &x, target).unwrap().loss;
        for r in 0..5 {
            let mut plus = params.clone();
            plus.b.add_at(r, 0, h);
            let mut minus = params.clone();
            minus.b.add_at(r, 0, -h);
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            assert!((fd - g.grad_b[r]).abs() < 1e-8);
        }
        // inactive columns have zero gradient
        let active: Vec<usize> = x.active.iter().map(|a| a.0).collect();
        for j in (0..7).filter(|j| !active.contains(j)) {
            let mut plus = params.clone();
            plus.w.add_at(0, j, h);
            assert_eq!(loss_at(&plus), g.loss);
        }
    }

    fn toy_corpus() -> (Vocabulary, Vec<Sentence>) {
        let lines: Vec<String> = (0..20)
            .map(|i| match i % 3 {
                0 => "the cat sat".to_string(),
                1 => "the dog ran".to_string(),
                _ => "a cat ran".to_string(),
            })
            .collect();
        let vocab = crate::corpus::build_vocab(&lines, crate::corpus::UnkPolicy::KeepAll).unwrap();
        let sents = lines.iter().map(|l| vocab.encode(l, true)).collect();
        (vocab, sents)
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (vocab, sents) = toy_corpus();
        let mut lm = LogLinearLm::new(vocab, vec![Template::Prev2Words]).unwrap();
        let before = lm.params.clone();
        let schedule = Schedule {
            learning_rate: 0.0,
            epochs: 1,
            ..Schedule::default()
        };
        lm.train_sgd(&sents, &[], &schedule).unwrap();
        assert_eq!(lm.params, before);
    }

    #[test]
    fn training_reduces_loss() {
        let (vocab, sents) = toy_corpus();
        let mut lm = LogLinearLm::new(vocab, vec![Template::Prev2Words]).unwrap();
        let schedule = Schedule {
            learning_rate: 0.1,
            epochs: 10,
            early_stop: false,
            ..Schedule::default()
        };
        let log = lm.train_sgd(&sents, &[], &schedule).unwrap();
        assert_eq!(log.len(), 10);
        assert!(log[9].train_loss < log[0].train_loss);
        let initial = (lm.vocab().len() as f64).ln();
        assert!(log[9].train_loss < initial);
    }

    #[test]
    fn unshuffled_training_is_deterministic() {
        let (vocab, sents) = toy_corpus();
        let schedule = Schedule {
            shuffle: false,
            epochs: 3,
            ..Schedule::default()
        };
        let run = || {
            let mut lm = LogLinearLm::new(vocab.clone(), vec![Template::Prev2Words]).unwrap();
            lm.train_sgd(&sents, &[], &schedule).unwrap();
            lm.params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn scorer_includes_eos() {
        let (vocab, sents) = toy_corpus();
        let lm = LogLinearLm::new(vocab, vec![Template::PrevWord]).unwrap();
        let scores = lm.score_target(None, &sents[0]).unwrap();
        assert_eq!(scores.len(), 4);
        assert_eq!(*sents[0].last().unwrap(), EOS);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(scores in prop::collection::vec(-20.0f64..20.0, 1..10), c in -10.0f64..10.0) {
            let p = softmax(&scores).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sparse_matches_dense(seed in 0u64..1000) {
            let mut rng = seeded_rng(seed);
            let (params, x, _) = random_instance(&mut rng, 6, 9);
            let sparse = score(&params, &x).unwrap();
            let dense = params.w.matmul(&x.to_dense());
            for (r, s) in sparse.iter().enumerate() {
                prop_assert!((s - (dense.get(r, 0) + params.b.get(r, 0))).abs() < 1e-12);
            }
        }

        #[test]
        fn loss_is_non_negative(seed in 0u64..1000) {
            let mut rng = seeded_rng(seed);
            let (params, x, t) = random_instance(&mut rng, 4, 5);
            prop_assert!(loss_and_grad(&params, &x, t).unwrap().loss >= 0.0);
        }
    }
}
