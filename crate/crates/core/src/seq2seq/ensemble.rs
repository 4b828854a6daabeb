//! Ensembles that average the next-token probabilities of several models,
//! each threading its own decoder state.

use crate::corpus::{Sentence, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{SentenceScorer, TokenScore};
use crate::neural_lm::rnn::score_tokens;
use crate::search::{Step, StepModel};

pub struct Ensemble<'a, M> {
    members: Vec<&'a M>,
}

impl<'a, M: StepModel + SentenceScorer> Ensemble<'a, M> {
    /// All members must share one target vocabulary.
    pub fn new(members: Vec<&'a M>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one model".into()))?;
        let vocab = first.target_vocab();
        if members.iter().any(|m| m.target_vocab() != vocab) {
            return Err(Error::Config(
                "ensemble members have different target vocabularies".into(),
            ));
        }
        Ok(Ensemble { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl<M: StepModel> StepModel for Ensemble<'_, M> {
    type State = Vec<M::State>;

    fn vocab_size(&self) -> usize {
        self.members[0].vocab_size()
    }

    fn start(&self, source: Option<&[TokenId]>) -> Result<Self::State> {
        self.members.iter().map(|m| m.start(source)).collect()
    }

    /// `p = (1/N) Σ p_i`.
    fn step(&self, state: &Self::State, prev: TokenId) -> Result<Step<Self::State>> {
        let n = self.members.len() as f64;
        let mut probs = vec![0.0; self.vocab_size()];
        let mut next = Vec::with_capacity(self.members.len());
        let mut attention: Option<Vec<f64>> = None;
        for (m, s) in self.members.iter().zip(state) {
            let step = m.step(s, prev)?;
            for (p, lp) in probs.iter_mut().zip(&step.log_probs) {
                *p += lp.exp() / n;
            }
            if let Some(a) = step.attention {
                match attention.as_mut() {
                    Some(acc) if acc.len() == a.len() => {
                        for (x, y) in acc.iter_mut().zip(&a) {
                            *x += y;
                        }
                    }
                    Some(_) => {}
                    None => attention = Some(a),
                }
            }
            next.push(step.state);
        }
        Ok(Step {
            log_probs: probs.iter().map(|p| p.ln()).collect(),
            state: next,
            attention,
        })
    }
}

impl<M: StepModel + SentenceScorer> SentenceScorer for Ensemble<'_, M> {
    fn target_vocab(&self) -> &Vocabulary {
        self.members[0].target_vocab()
    }

    fn score_target(
        &self,
        source: Option<&Sentence>,
        target: &Sentence,
    ) -> Result<Vec<TokenScore>> {
        let mut state = self.start(source.map(|s| s.ids()))?;
        score_tokens(self.target_vocab(), target, |prev| {
            let step = self.step(&state, prev)?;
            state = step.state;
            Ok(step.log_probs)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, UnkPolicy, BOS, EOS};
    use crate::seq2seq::{EncDecConfig, EncDecModel};
    use crate::train::seeded_rng;

    /// Fixed distribution at every step.
    struct Fixed {
        vocab: Vocabulary,
        probs: Vec<f64>,
    }

    impl StepModel for Fixed {
        type State = ();

        fn vocab_size(&self) -> usize {
            self.probs.len()
        }

        fn start(&self, _: Option<&[TokenId]>) -> Result<()> {
            Ok(())
        }

        fn step(&self, _: &(), _: TokenId) -> Result<Step<()>> {
            Ok(Step {
                log_probs: self.probs.iter().map(|p| p.ln()).collect(),
                state: (),
                attention: None,
            })
        }
    }

    impl SentenceScorer for Fixed {
        fn target_vocab(&self) -> &Vocabulary {
            &self.vocab
        }

        fn score_target(&self, _: Option<&Sentence>, _: &Sentence) -> Result<Vec<TokenScore>> {
            unimplemented!("not needed")
        }
    }

    fn fixed(probs: Vec<f64>) -> Fixed {
        Fixed {
            vocab: build_vocab(&["a"], UnkPolicy::KeepAll).unwrap(),
            probs,
        }
    }

    #[test]
    fn opposite_one_hots_average() {
        let a = fixed(vec![1.0, 0.0, 0.0, 0.0]);
        let b = fixed(vec![0.0, 1.0, 0.0, 0.0]);
        let e = Ensemble::new(vec![&a, &b]).unwrap();
        let p = e.step(&vec![(), ()], BOS).unwrap().log_probs;
        assert_eq!(p[0].exp(), 0.5);
        assert_eq!(p[1].exp(), 0.5);
        assert_eq!(p[2].exp(), 0.0);
    }

    #[test]
    fn uniform_members_stay_uniform() {
        let ms: Vec<Fixed> = (0..3).map(|_| fixed(vec![0.25; 4])).collect();
        let e = Ensemble::new(ms.iter().collect()).unwrap();
        let p = e.step(&vec![(); 3], BOS).unwrap().log_probs;
        for lp in p {
            assert!((lp.exp() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_models_match_single() {
        let s = build_vocab(&["x y"], UnkPolicy::KeepAll).unwrap();
        let t = build_vocab(&["a b"], UnkPolicy::KeepAll).unwrap();
        let cfg = EncDecConfig {
            embed_dim: 3,
            hidden: 3,
            attn_hidden: 3,
            ..EncDecConfig::default()
        };
        let m = EncDecModel::new(s, t, cfg, &mut seeded_rng(2)).unwrap();
        let e = Ensemble::new(vec![&m, &m, &m]).unwrap();
        let src = [3, 4, 3];
        let mut ss = m.start(Some(&src)).unwrap();
        let mut es = e.start(Some(&src)).unwrap();
        for prev in [BOS, 3, 4, EOS] {
            let a = m.step(&ss, prev).unwrap();
            let b = e.step(&es, prev).unwrap();
            for (x, y) in a.log_probs.iter().zip(&b.log_probs) {
                assert!((x.exp() - y.exp()).abs() < 1e-12);
            }
            ss = a.state;
            es = b.state;
        }
    }

    #[test]
    fn vocabulary_mismatch_is_an_error() {
        let a = fixed(vec![0.5, 0.5, 0.0, 0.0]);
        let mut b = fixed(vec![0.5, 0.5, 0.0, 0.0]);
        b.vocab = build_vocab(&["b"], UnkPolicy::KeepAll).unwrap();
        assert!(Ensemble::new(vec![&a, &b]).is_err());
        assert!(Ensemble::<Fixed>::new(vec![]).is_err());
    }
}
