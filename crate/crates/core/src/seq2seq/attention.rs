//! Attention score functions: dot product, bilinear, and a one-hidden-layer
//! MLP. Each maps the source matrix `H` (one column per source word) and a
//! decoder state `h` to a column of unnormalized scores.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ATTN_HIDDEN_DEFAULT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionKind {
    None,
    Dot,
    Bilinear,
    #[default]
    Mlp,
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttentionKind::None),
            "dot" => Ok(AttentionKind::Dot),
            "bilinear" => Ok(AttentionKind::Bilinear),
            "mlp" => Ok(AttentionKind::Mlp),
            other => Err(Error::Config(format!("unknown attention kind {other:?}"))),
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::None => "none",
            AttentionKind::Dot => "dot",
            AttentionKind::Bilinear => "bilinear",
            AttentionKind::Mlp => "mlp",
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Scorer {
    Dot,
    Bilinear {
        w: ParamId,
    },
    /// `W1 = [W1_e W1_f]` split by which input it multiplies; `w2` is a row.
    Mlp {
        w1_e: ParamId,
        w1_f: ParamId,
        w2: ParamId,
    },
}

impl Scorer {
    pub(crate) fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        kind: AttentionKind,
        enc_dim: usize,
        dec_dim: usize,
        attn_hidden: usize,
        rng: &mut R,
    ) -> Result<Option<Self>> {
        Ok(match kind {
            AttentionKind::None => None,
            AttentionKind::Dot => {
                if enc_dim != dec_dim {
                    return Err(Error::Config(format!(
                        "dot attention needs equal encoder and decoder sizes, got {enc_dim} and {dec_dim}"
                    )));
                }
                Some(Scorer::Dot)
            }
            AttentionKind::Bilinear => {
                let w = params.add("attn.W", Tensor::glorot(enc_dim, dec_dim, rng));
                Some(Scorer::Bilinear { w })
            }
            AttentionKind::Mlp => {
                if attn_hidden == 0 {
                    return Err(Error::Config(
                        "attention hidden size must be positive".into(),
                    ));
                }
                let w1 = Tensor::glorot(attn_hidden, dec_dim + enc_dim, rng);
                let mut w1_e = Tensor::zeros(attn_hidden, dec_dim);
                let mut w1_f = Tensor::zeros(attn_hidden, enc_dim);
                for r in 0..attn_hidden {
                    for c in 0..dec_dim + enc_dim {
                        if c < dec_dim {
                            w1_e.set(r, c, w1.get(r, c));
                        } else {
                            w1_f.set(r, c - dec_dim, w1.get(r, c));
                        }
                    }
                }
                let w1_e = params.add("attn.W1_e", w1_e);
                let w1_f = params.add("attn.W1_f", w1_f);
                let w2 = params.add("attn.w2", Tensor::glorot(1, attn_hidden, rng));
                Some(Scorer::Mlp { w1_e, w1_f, w2 })
            }
        })
    }

    pub(crate) fn kind(&self) -> AttentionKind {
        match self {
            Scorer::Dot => AttentionKind::Dot,
            Scorer::Bilinear { .. } => AttentionKind::Bilinear,
            Scorer::Mlp { .. } => AttentionKind::Mlp,
        }
    }

    /// Scores of every source column at once, as an `|F| × 1` column.
    pub(crate) fn scores(
        &self,
        g: &mut Graph<'_>,
        h_f: NodeId,
        h_e: NodeId,
        src_len: usize,
    ) -> NodeId {
        match *self {
            Scorer::Dot => {
                let ht = g.transpose(h_f);
                g.matmul(ht, h_e)
            }
            Scorer::Bilinear { w } => {
                let w = g.parameter(w);
                let wh = g.matmul(w, h_e);
                let ht = g.transpose(h_f);
                g.matmul(ht, wh)
            }
            Scorer::Mlp { w1_e, w1_f, w2 } => {
                let we = g.parameter(w1_e);
                let wf = g.parameter(w1_f);
                let e_part = g.matmul(we, h_e);
                let f_part = g.matmul(wf, h_f);
                let e_rep = g.repeat_cols(e_part, src_len);
                let pre = g.add(f_part, e_rep);
                let hidden = g.tanh(pre);
                let w2 = g.parameter(w2);
                let row = g.matmul(w2, hidden);
                g.transpose(row)
            }
        }
    }

    /// Score of a single source column (`1 × 1`), written directly from the
    /// per-word definition.
    pub(crate) fn score_one(&self, g: &mut Graph<'_>, h_fj: NodeId, h_e: NodeId) -> NodeId {
        match *self {
            Scorer::Dot => {
                let t = g.transpose(h_fj);
                g.matmul(t, h_e)
            }
            Scorer::Bilinear { w } => {
                let w = g.parameter(w);
                let t = g.transpose(h_fj);
                let tw = g.matmul(t, w);
                g.matmul(tw, h_e)
            }
            Scorer::Mlp { w1_e, w1_f, w2 } => {
                let we = g.parameter(w1_e);
                let wf = g.parameter(w1_f);
                let a = g.matmul(we, h_e);
                let b = g.matmul(wf, h_fj);
                let pre = g.add(a, b);
                let hidden = g.tanh(pre);
                let w2 = g.parameter(w2);
                g.matmul(w2, hidden)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::seeded_rng;
    use proptest::prelude::*;

    fn dot_score(a: &[f64], b: &[f64]) -> f64 {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let hf = g.input(Tensor::vector(a));
        let he = g.input(Tensor::vector(b));
        let s = Scorer::Dot.scores(&mut g, hf, he, 1);
        g.forward().unwrap();
        g.value(s).scalar_value()
    }

    #[test]
    fn dot_of_unit_vectors() {
        assert!((dot_score(&[0.6, 0.8], &[0.6, 0.8]) - 1.0).abs() < 1e-15);
        assert_eq!(dot_score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn dot_needs_equal_sizes() {
        let mut ps = ParamSet::new();
        let err =
            Scorer::new(&mut ps, AttentionKind::Dot, 4, 3, 5, &mut seeded_rng(0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(Scorer::new(
            &mut ps,
            AttentionKind::Bilinear,
            4,
            3,
            5,
            &mut seeded_rng(0)
        )
        .is_ok());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            AttentionKind::None,
            AttentionKind::Dot,
            AttentionKind::Bilinear,
            AttentionKind::Mlp,
        ] {
            assert_eq!(k.to_string().parse::<AttentionKind>().unwrap(), k);
        }
        assert!("cosine".parse::<AttentionKind>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn batched_scores_equal_per_column(seed in 0u64..10_000, src_len in 1usize..6, kind in 0usize..3) {
            let kind = [AttentionKind::Dot, AttentionKind::Bilinear, AttentionKind::Mlp][kind];
            let mut rng = seeded_rng(seed);
            let (enc, dec) = if kind == AttentionKind::Dot { (3, 3) } else { (4, 3) };
            let mut ps = ParamSet::new();
            let scorer = Scorer::new(&mut ps, kind, enc, dec, 5, &mut rng).unwrap().unwrap();
            let h = Tensor::uniform(enc, src_len, 1.0, &mut rng);
            let he = Tensor::uniform(dec, 1, 1.0, &mut rng);
            let mut g = Graph::new(&ps);
            let hf = g.input(h.clone());
            let hen = g.input(he);
            let all = scorer.scores(&mut g, hf, hen, src_len);
            let cols: Vec<NodeId> = (0..src_len)
                .map(|j| {
                    let c = g.input(h.column(j));
                    scorer.score_one(&mut g, c, hen)
                })
                .collect();
            g.forward().unwrap();
            for (j, c) in cols.into_iter().enumerate() {
                prop_assert!((g.value(all).get(j, 0) - g.value(c).scalar_value()).abs() < 1e-12);
            }
        }
    }
}
