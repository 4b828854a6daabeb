//! Finite-difference gradient suites. Each returns `(name, max relative
//! error)` pairs; callers pick the tolerance.

use rand::Rng;
use s2s_core::autodiff::{Graph, NodeId, ParamId, ParamSet};
use s2s_core::corpus::{build_vocab, make_batches, UnkPolicy};
use s2s_core::loglinear::{loss_and_grad, FeatureVector, LogLinearParams};
use s2s_core::neural_lm::{
    CellKind, FfnnLm, FfnnLmConfig, RecurrentCell, RnnLm, RnnLmConfig, StackedRnn, StateNodes,
};
use s2s_core::seq2seq::{AttentionKind, BridgeKind, EncDecConfig, EncDecModel, EncoderKind};
use s2s_core::tensor::Tensor;
use s2s_core::train::seeded_rng;

use super::{central_difference, max_param_grad_error, rel_error};

/// `Σ x ⊙ R` for a fixed random `R`, turning any node into a scalar with a
/// generic gradient.
fn project(g: &mut Graph<'_>, x: NodeId, rows: usize, cols: usize, seed: u64) -> NodeId {
    let r = g.input(Tensor::uniform(rows, cols, 1.0, &mut seeded_rng(seed)));
    let prod = g.cmult(x, r);
    g.sum(prod)
}

/// Entries bounded away from zero, so kinks of relu and step are never
/// straddled by the finite-difference probe.
fn away_from_zero(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

pub fn loglinear() -> Vec<(String, f64)> {
    let mut rng = seeded_rng(11);
    let (v, dim) = (6, 9);
    let mut params = LogLinearParams::zeros(v, dim);
    params.w = Tensor::uniform(v, dim, 1.0, &mut rng);
    params.b = Tensor::uniform(v, 1, 1.0, &mut rng);
    let x = FeatureVector {
        active: vec![(1, 1.0), (4, 0.5), (7, -2.0)],
        dim,
    };
    let mut out = Vec::new();
    for target in [0, 3, 5] {
        let g = loss_and_grad(&params, &x, target).unwrap();
        let loss_at = |p: &LogLinearParams| loss_and_grad(p, &x, target).unwrap().loss;
        let mut worst = 0.0f64;
        for r in 0..v {
            let numeric = central_difference(
                |val| {
                    let mut p = params.clone();
                    p.b.set(r, 0, val);
                    loss_at(&p)
                },
                params.b.get(r, 0),
            );
            worst = worst.max(rel_error(g.grad_b[r], numeric));
            for j in 0..dim {
                let numeric = central_difference(
                    |val| {
                        let mut p = params.clone();
                        p.w.set(r, j, val);
                        loss_at(&p)
                    },
                    params.w.get(r, j),
                );
                let analytic = g
                    .grad_w_cols
                    .iter()
                    .find(|(c, _)| *c == j)
                    .map_or(0.0, |(_, col)| col[r]);
                worst = worst.max(rel_error(analytic, numeric));
            }
        }
        out.push((format!("log-linear target {target}"), worst));
    }
    out
}

type BuildFn = Box<dyn Fn(&mut Graph<'_>, &[ParamId]) -> NodeId>;

struct OpCase {
    name: &'static str,
    params: ParamSet,
    build: BuildFn,
    ids: Vec<ParamId>,
}

fn case(
    name: &'static str,
    shapes: &[(usize, usize)],
    seed: u64,
    build: impl Fn(&mut Graph<'_>, &[ParamId]) -> NodeId + 'static,
) -> OpCase {
    let mut rng = seeded_rng(seed);
    let mut params = ParamSet::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| params.add(format!("p{i}"), away_from_zero(r, c, &mut rng)))
        .collect();
    OpCase {
        name,
        params,
        build: Box::new(build),
        ids,
    }
}

pub fn autodiff_ops() -> Vec<(String, f64)> {
    let cases = vec![
        case("matmul", &[(3, 4), (4, 2)], 1, |g, p| {
            let (a, b) = (g.parameter(p[0]), g.parameter(p[1]));
            let y = g.matmul(a, b);
            project(g, y, 3, 2, 100)
        }),
        case("add", &[(3, 2), (3, 2)], 2, |g, p| {
            let (a, b) = (g.parameter(p[0]), g.parameter(p[1]));
            let y = g.add(a, b);
            project(g, y, 3, 2, 101)
        }),
        case("add broadcast column", &[(3, 4), (3, 1)], 3, |g, p| {
            let (a, b) = (g.parameter(p[0]), g.parameter(p[1]));
            let y = g.add(a, b);
            project(g, y, 3, 4, 102)
        }),
        case("sub", &[(2, 3), (2, 3)], 4, |g, p| {
            let (a, b) = (g.parameter(p[0]), g.parameter(p[1]));
            let y = g.sub(a, b);
            project(g, y, 2, 3, 103)
        }),
        case("affine", &[(3, 4), (4, 1), (3, 1)], 5, |g, p| {
            let (w, x, b) = (g.parameter(p[0]), g.parameter(p[1]), g.parameter(p[2]));
            let y = g.affine(w, x, b);
            project(g, y, 3, 1, 104)
        }),
        case("concat_rows", &[(2, 2), (3, 2)], 6, |g, p| {
            let (a, b) = (g.parameter(p[0]), g.parameter(p[1]));
            let y = g.concat_rows(vec![a, b]);
            project(g, y, 5, 2, 105)
        }),
        case("concat_cols", &[(3, 1), (3, 2)], 7, |g, p| {
            let (a, b) = (g.parameter(p[0]), g.parameter(p[1]));
            let y = g.concat_cols(vec![a, b]);
            project(g, y, 3, 3, 106)
        }),
        case("cmult", &[(3, 2), (3, 2)], 8, |g, p| {
            let (a, b) = (g.parameter(p[0]), g.parameter(p[1]));
            let y = g.cmult(a, b);
            project(g, y, 3, 2, 107)
        }),
        case("tanh", &[(4, 2)], 9, |g, p| {
            let a = g.parameter(p[0]);
            let y = g.tanh(a);
            project(g, y, 4, 2, 108)
        }),
        case("sigmoid", &[(4, 2)], 10, |g, p| {
            let a = g.parameter(p[0]);
            let y = g.sigmoid(a);
            project(g, y, 4, 2, 109)
        }),
        case("relu", &[(4, 2)], 11, |g, p| {
            let a = g.parameter(p[0]);
            let y = g.relu(a);
            project(g, y, 4, 2, 110)
        }),
        case("softmax", &[(5, 2)], 13, |g, p| {
            let a = g.parameter(p[0]);
            let y = g.softmax(a);
            project(g, y, 5, 2, 112)
        }),
        case("pick_neg_log_softmax", &[(6, 1)], 14, |g, p| {
            let a = g.parameter(p[0]);
            g.pick_neg_log_softmax(a, 4)
        }),
        case(
            "pick_neg_log_softmax masked batch",
            &[(5, 3)],
            15,
            |g, p| {
                let a = g.parameter(p[0]);
                g.pick_neg_log_softmax_batch(a, vec![0, 3, 4], vec![1.0, 0.0, 1.0])
            },
        ),
        case("squared_distance", &[(4, 1), (4, 1)], 16, |g, p| {
            let (a, b) = (g.parameter(p[0]), g.parameter(p[1]));
            g.squared_distance(a, b)
        }),
        case("sum and sum_all", &[(3, 2), (2, 2)], 17, |g, p| {
            let (a, b) = (g.parameter(p[0]), g.parameter(p[1]));
            let (sa, sb) = (g.sum(a), g.sum(b));
            let t = g.tanh(sb);
            g.sum_all(&[sa, t, sa])
        }),
        case("scale", &[(3, 2)], 18, |g, p| {
            let a = g.parameter(p[0]);
            let y = g.scale(a, -2.5);
            project(g, y, 3, 2, 113)
        }),
        case("transpose", &[(3, 2)], 19, |g, p| {
            let a = g.parameter(p[0]);
            let y = g.transpose(a);
            project(g, y, 2, 3, 114)
        }),
        case("column", &[(3, 4)], 20, |g, p| {
            let a = g.parameter(p[0]);
            let y = g.column(a, 2);
            project(g, y, 3, 1, 115)
        }),
        case("repeat_cols", &[(3, 1)], 21, |g, p| {
            let a = g.parameter(p[0]);
            let y = g.repeat_cols(a, 4);
            project(g, y, 3, 4, 116)
        }),
        case("lookup", &[(3, 5)], 22, |g, p| {
            let y = g.lookup(p[0], 3);
            project(g, y, 3, 1, 117)
        }),
        case("lookup_columns with repeats", &[(3, 5)], 23, |g, p| {
            let y = g.lookup_columns(p[0], vec![1, 4, 1]);
            project(g, y, 3, 3, 118)
        }),
        case(
            "shared parameter on two paths",
            &[(3, 3), (3, 1)],
            24,
            |g, p| {
                let (w, x) = (g.parameter(p[0]), g.parameter(p[1]));
                let h1 = g.matmul(w, x);
                let h1 = g.tanh(h1);
                let h2 = g.matmul(w, h1);
                project(g, h2, 3, 1, 119)
            },
        ),
    ];
    cases
        .into_iter()
        .map(|c| {
            let ids = c.ids.clone();
            let err = max_param_grad_error(&c.params, |g| (c.build)(g, &ids));
            (c.name.to_string(), err)
        })
        .collect()
}

const CELL_KINDS: [CellKind; 4] = [
    CellKind::Rnn,
    CellKind::Lstm,
    CellKind::LstmForget,
    CellKind::Gru,
];

/// Three-step unroll of one cell, with the inputs and the initial state
/// also treated as parameters.
pub fn cells() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for kind in CELL_KINDS {
        let (inp, hid, batch) = (3, 4, 2);
        let mut rng = seeded_rng(31);
        let mut params = ParamSet::new();
        let cell = RecurrentCell::new(&mut params, "cell", kind, inp, hid, &mut rng);
        let xs: Vec<ParamId> = (0..3)
            .map(|t| params.add(format!("x{t}"), Tensor::uniform(inp, batch, 1.0, &mut rng)))
            .collect();
        let h0 = params.add("h0", Tensor::uniform(hid, batch, 0.5, &mut rng));
        let c0 = kind
            .has_cell()
            .then(|| params.add("c0", Tensor::uniform(hid, batch, 0.5, &mut rng)));
        let err = max_param_grad_error(&params, |g| {
            let mut state = StateNodes {
                h: g.parameter(h0),
                c: c0.map(|c| g.parameter(c)),
            };
            for &x in &xs {
                let xn = g.parameter(x);
                state = cell.step(g, xn, &state).unwrap();
            }
            let mut loss = project(g, state.h, hid, batch, 7);
            if let Some(c) = state.c {
                let lc = project(g, c, hid, batch, 8);
                loss = g.add(loss, lc);
            }
            loss
        });
        out.push((format!("{kind} cell, 3 steps"), err));
    }

    let mut rng = seeded_rng(32);
    let mut params = ParamSet::new();
    let stack =
        StackedRnn::new(&mut params, "stack", CellKind::Gru, 3, 3, 2, true, &mut rng).unwrap();
    let xs: Vec<ParamId> = (0..3)
        .map(|t| params.add(format!("x{t}"), Tensor::uniform(3, 1, 1.0, &mut rng)))
        .collect();
    let err = max_param_grad_error(&params, |g| {
        let mut states = stack.zero_state(g, 1);
        let mut top = None;
        for &x in &xs {
            let xn = g.parameter(x);
            let (y, next) = stack.step(g, xn, &states).unwrap();
            states = next;
            top = Some(y);
        }
        project(g, top.unwrap(), 3, 1, 9)
    });
    out.push(("2-layer residual gru stack, 3 steps".to_string(), err));
    out
}

fn toy_lines() -> Vec<&'static str> {
    vec!["a b c", "b a", "c c a b", "a", "d b a c"]
}

pub fn language_models() -> Vec<(String, f64)> {
    let lines = toy_lines();
    let vocab = build_vocab(&lines, UnkPolicy::KeepAll).unwrap();
    let sents: Vec<_> = lines.iter().map(|l| vocab.encode(l, true)).collect();
    let batch = &make_batches(&sents, 5, false).unwrap()[0];
    let mut out = Vec::new();

    let ffnn = FfnnLm::new(
        vocab.clone(),
        FfnnLmConfig {
            order: 3,
            embed_dim: 3,
            hidden: 4,
            ..FfnnLmConfig::default()
        },
        &mut seeded_rng(5),
    )
    .unwrap();
    let err = max_param_grad_error(&ffnn.params, |g| ffnn.batch_loss(g, batch).unwrap());
    out.push(("feed-forward LM batch loss".to_string(), err));

    for kind in [CellKind::LstmForget, CellKind::Gru] {
        let rnn = RnnLm::new(
            vocab.clone(),
            RnnLmConfig {
                cell: kind,
                embed_dim: 3,
                hidden: 3,
                layers: 2,
                residual: true,
            },
            &mut seeded_rng(6),
        )
        .unwrap();
        let err = max_param_grad_error(&rnn.params, |g| rnn.batch_loss(g, batch).unwrap());
        out.push((format!("{kind} RNN LM masked batch loss"), err));
    }
    out
}

pub fn seq2seq_configs() -> Vec<(&'static str, EncDecConfig)> {
    let small = EncDecConfig {
        embed_dim: 3,
        hidden: 3,
        attn_hidden: 4,
        ..EncDecConfig::default()
    };
    vec![
        ("bidir + tanh bridge + mlp attention", small.clone()),
        (
            "bidir + concat bridge + dot attention",
            EncDecConfig {
                bridge: BridgeKind::Concat,
                attention: AttentionKind::Dot,
                ..small.clone()
            },
        ),
        (
            "reverse + final bridge + bilinear attention, gru",
            EncDecConfig {
                encoder: EncoderKind::Reverse,
                bridge: BridgeKind::Final,
                attention: AttentionKind::Bilinear,
                cell: CellKind::Gru,
                ..small.clone()
            },
        ),
        (
            "forward + final, no attention, 2 layers",
            EncDecConfig {
                encoder: EncoderKind::Forward,
                bridge: BridgeKind::Final,
                attention: AttentionKind::None,
                layers: 2,
                ..small
            },
        ),
    ]
}

pub fn seq2seq() -> Vec<(String, f64)> {
    let src_lines = ["x y z", "z y", "w x"];
    let tgt_lines = ["a b c", "c b", "b a"];
    let sv = build_vocab(&src_lines, UnkPolicy::KeepAll).unwrap();
    let tv = build_vocab(&tgt_lines, UnkPolicy::KeepAll).unwrap();
    let src = sv.encode("x y w z", false);
    let tgt = tv.encode("a c b", true);
    seq2seq_configs()
        .into_iter()
        .map(|(name, cfg)| {
            let model = EncDecModel::new(sv.clone(), tv.clone(), cfg, &mut seeded_rng(21)).unwrap();
            let err =
                max_param_grad_error(&model.params, |g| model.loss_node(g, &src, &tgt).unwrap());
            (format!("seq2seq end to end: {name}"), err)
        })
        .collect()
}
