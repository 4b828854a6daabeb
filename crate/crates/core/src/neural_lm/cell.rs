//! Recurrent cells (Elman RNN, LSTM with and without a forget gate, GRU)
//! expressed as computation-graph builders, and stacks of them.
//!
//! Every cell operates column-wise, so the same code serves a single
//! sequence (`x` is `in × 1`) and a minibatch (`x` is `in × B`).

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Rnn,
    /// LSTM whose memory cell adds the gated update to the previous cell.
    Lstm,
    /// LSTM with a forget gate on the previous cell.
    LstmForget,
    Gru,
}

impl CellKind {
    /// Gate names, in parameter order.
    fn gates(self) -> &'static [&'static str] {
        match self {
            CellKind::Rnn => &["h"],
            CellKind::Lstm => &["u", "i", "o"],
            CellKind::LstmForget => &["u", "i", "f", "o"],
            CellKind::Gru => &["r", "z", "h"],
        }
    }

    pub fn has_cell(self) -> bool {
        matches!(self, CellKind::Lstm | CellKind::LstmForget)
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(CellKind::Rnn),
            "lstm" => Ok(CellKind::Lstm),
            "lstm_forget" | "lstm-forget" => Ok(CellKind::LstmForget),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!("unknown cell kind {other:?}"))),
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::LstmForget => "lstm_forget",
            CellKind::Gru => "gru",
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Gate {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct RecurrentCell {
    kind: CellKind,
    input_size: usize,
    hidden_size: usize,
    gates: Vec<Gate>,
}

/// Hidden (and, for LSTMs, cell) state as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct StateNodes {
    pub h: NodeId,
    pub c: Option<NodeId>,
}

/// Concrete state values, e.g. carried between decoding steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Tensor,
    pub c: Option<Tensor>,
}

impl RecurrentState {
    pub fn zeros(kind: CellKind, hidden: usize, batch: usize) -> Self {
        RecurrentState {
            h: Tensor::zeros(hidden, batch),
            c: kind.has_cell().then(|| Tensor::zeros(hidden, batch)),
        }
    }

    pub fn to_nodes(&self, g: &mut Graph) -> StateNodes {
        StateNodes {
            h: g.input(self.h.clone()),
            c: self.c.as_ref().map(|c| g.input(c.clone())),
        }
    }

    pub fn from_nodes(g: &Graph, s: &StateNodes) -> Self {
        RecurrentState {
            h: g.value(s.h).clone(),
            c: s.c.map(|c| g.value(c).clone()),
        }
    }
}

impl RecurrentCell {
    /// Register freshly initialized parameters under `prefix`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        kind: CellKind,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let gates = kind
            .gates()
            .iter()
            .map(|name| {
                let wx = params.add(
                    format!("{prefix}.W_x{name}"),
                    Tensor::glorot(hidden_size, input_size, rng),
                );
                let wh = params.add(
                    format!("{prefix}.W_h{name}"),
                    Tensor::glorot(hidden_size, hidden_size, rng),
                );
                let bias = if *name == "f" { FORGET_BIAS_INIT } else { 0.0 };
                let b = params.add(
                    format!("{prefix}.b_{name}"),
                    Tensor::filled(hidden_size, 1, bias),
                );
                Gate { wx, wh, b }
            })
            .collect();
        RecurrentCell {
            kind,
            input_size,
            hidden_size,
            gates,
        }
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    /// Parameter ids of the named gate: (W_x, W_h, b).
    pub fn gate_params(&self, name: &str) -> Option<(ParamId, ParamId, ParamId)> {
        let i = self.kind.gates().iter().position(|g| *g == name)?;
        let g = self.gates[i];
        Some((g.wx, g.wh, g.b))
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> StateNodes {
        RecurrentState::zeros(self.kind, self.hidden_size, batch).to_nodes(g)
    }

    fn pre(&self, g: &mut Graph, gate: usize, x: NodeId, h: NodeId) -> NodeId {
        let Gate { wx, wh, b } = self.gates[gate];
        let (wx, wh, b) = (g.parameter(wx), g.parameter(wh), g.parameter(b));
        let a = g.matmul(wx, x);
        let r = g.matmul(wh, h);
        let s = g.add(a, r);
        g.add(s, b)
    }

    /// One recurrence step.
    pub fn step(&self, g: &mut Graph, x: NodeId, state: &StateNodes) -> Result<StateNodes> {
        if self.kind.has_cell() != state.c.is_some() {
            return Err(Error::Config(format!(
                "{} cell given a state {} a memory cell",
                self.kind,
                if state.c.is_some() { "with" } else { "without" }
            )));
        }
        let h_prev = state.h;
        Ok(match self.kind {
            CellKind::Rnn => {
                let a = self.pre(g, 0, x, h_prev);
                StateNodes {
                    h: g.tanh(a),
                    c: None,
                }
            }
            CellKind::Lstm | CellKind::LstmForget => {
                let c_prev = state.c.expect("checked above");
                let forget = self.kind == CellKind::LstmForget;
                let ua = self.pre(g, 0, x, h_prev);
                let u = g.tanh(ua);
                let ia = self.pre(g, 1, x, h_prev);
                let i = g.sigmoid(ia);
                let carried = if forget {
                    let fa = self.pre(g, 2, x, h_prev);
                    let f = g.sigmoid(fa);
                    g.cmult(f, c_prev)
                } else {
                    c_prev
                };
                let oa = self.pre(g, if forget { 3 } else { 2 }, x, h_prev);
                let o = g.sigmoid(oa);
                let iu = g.cmult(i, u);
                let c = g.add(iu, carried);
                let tc = g.tanh(c);
                StateNodes {
                    h: g.cmult(o, tc),
                    c: Some(c),
                }
            }
            CellKind::Gru => {
                let ra = self.pre(g, 0, x, h_prev);
                let r = g.sigmoid(ra);
                let za = self.pre(g, 1, x, h_prev);
                let z = g.sigmoid(za);
                let Gate { wx, wh, b } = self.gates[2];
                let (wx, wh, b) = (g.parameter(wx), g.parameter(wh), g.parameter(b));
                let rh = g.cmult(r, h_prev);
                let xa = g.matmul(wx, x);
                let ha = g.matmul(wh, rh);
                let s = g.add(xa, ha);
                let s = g.add(s, b);
                let candidate = g.tanh(s);
                // (1 − z) h + z h̃  =  h + z (h̃ − h)
                let delta = g.sub(candidate, h_prev);
                let zd = g.cmult(z, delta);
                StateNodes {
                    h: g.add(h_prev, zd),
                    c: None,
                }
            }
        })
    }
}

/// Apply one cell step to concrete tensors.
pub fn cell_step(
    params: &ParamSet,
    cell: &RecurrentCell,
    x: &Tensor,
    state: &RecurrentState,
) -> Result<RecurrentState> {
    let mut g = Graph::new(params);
    let xn = g.input(x.clone());
    let s = state.to_nodes(&mut g);
    let out = cell.step(&mut g, xn, &s)?;
    g.forward()?;
    Ok(RecurrentState::from_nodes(&g, &out))
}

#[derive(Clone, Debug)]
pub struct StackedRnn {
    layers: Vec<RecurrentCell>,
    residual: bool,
}

impl StackedRnn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        kind: CellKind,
        input_size: usize,
        hidden_size: usize,
        num_layers: usize,
        residual: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::Config(
                "a recurrent stack needs at least one layer".into(),
            ));
        }
        if residual && input_size != hidden_size {
            return Err(Error::Config(format!(
                "residual connections need equal input and hidden sizes, got {input_size} and {hidden_size}"
            )));
        }
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input_size } else { hidden_size };
                RecurrentCell::new(
                    params,
                    &format!("{prefix}.l{l}"),
                    kind,
                    inp,
                    hidden_size,
                    rng,
                )
            })
            .collect();
        Ok(StackedRnn { layers, residual })
    }

    pub fn layers(&self) -> &[RecurrentCell] {
        &self.layers
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn kind(&self) -> CellKind {
        self.layers[0].kind()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size()
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> Vec<StateNodes> {
        self.layers.iter().map(|l| l.zero_state(g, batch)).collect()
    }

    pub fn zero_values(&self, batch: usize) -> Vec<RecurrentState> {
        self.layers
            .iter()
            .map(|l| RecurrentState::zeros(l.kind(), l.hidden_size(), batch))
            .collect()
    }

    /// Advance every layer by one step; returns the new states. The output
    /// of the stack is the top layer's `h` (plus its input when residual).
    pub fn step(
        &self,
        g: &mut Graph,
        x: NodeId,
        states: &[StateNodes],
    ) -> Result<(NodeId, Vec<StateNodes>)> {
        let mut input = x;
        let mut next = Vec::with_capacity(self.layers.len());
        for (layer, state) in self.layers.iter().zip(states) {
            let s = layer.step(g, input, state)?;
            input = if self.residual {
                g.add(s.h, input)
            } else {
                s.h
            };
            next.push(s);
        }
        Ok((input, next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;
    use crate::train::seeded_rng;

    fn zero_cell(kind: CellKind, inp: usize, hid: usize) -> (ParamSet, RecurrentCell) {
        let mut ps = ParamSet::new();
        let cell = RecurrentCell::new(&mut ps, "c", kind, inp, hid, &mut seeded_rng(0));
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).data_mut().fill(0.0);
        }
        (ps, cell)
    }

    #[test]
    fn lstm_with_zero_weights_keeps_cell() {
        let (ps, cell) = zero_cell(CellKind::Lstm, 2, 1);
        let state = RecurrentState {
            h: Tensor::vector(&[0.3]),
            c: Some(Tensor::vector(&[2.0])),
        };
        let out = cell_step(&ps, &cell, &Tensor::vector(&[1.0, -1.0]), &state).unwrap();
        assert_eq!(out.c.as_ref().unwrap().scalar_value(), 2.0);
        let expected = 0.5 * 2f64.tanh();
        assert!((out.h.scalar_value() - expected).abs() < 1e-15);
        assert!((out.h.scalar_value() - 0.482).abs() < 1e-3);
    }

    #[test]
    fn gru_with_closed_update_gate_keeps_state() {
        let mut ps = ParamSet::new();
        let cell = RecurrentCell::new(&mut ps, "g", CellKind::Gru, 3, 2, &mut seeded_rng(1));
        let (_, _, bz) = cell.gate_params("z").unwrap();
        ps.get_mut(bz).data_mut().fill(-1000.0);
        let state = RecurrentState {
            h: Tensor::vector(&[0.4, -0.9]),
            c: None,
        };
        let out = cell_step(&ps, &cell, &Tensor::vector(&[1.0, 2.0, -1.0]), &state).unwrap();
        for (a, b) in out.h.data().iter().zip(state.h.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn saturated_forget_gate_passes_cell_through() {
        let mut ps = ParamSet::new();
        let cell = RecurrentCell::new(&mut ps, "f", CellKind::LstmForget, 2, 2, &mut seeded_rng(2));
        let (_, _, bf) = cell.gate_params("f").unwrap();
        ps.get_mut(bf).data_mut().fill(100.0);
        let state = RecurrentState {
            h: Tensor::vector(&[0.1, 0.2]),
            c: Some(Tensor::vector(&[1.5, -0.5])),
        };
        let x = Tensor::vector(&[0.3, -0.7]);
        let out = cell_step(&ps, &cell, &x, &state).unwrap();

        // i ⊙ u computed by hand from the same parameters
        let affine = |gate: &str| {
            let (wx, wh, b) = cell.gate_params(gate).unwrap();
            let mut a = ps.get(wx).matmul(&x);
            a.add_assign(&ps.get(wh).matmul(&state.h));
            a.add_assign(ps.get(b));
            a
        };
        let u = affine("u").map(f64::tanh);
        let i = affine("i").map(sigmoid);
        for r in 0..2 {
            let expected = i.get(r, 0) * u.get(r, 0) + state.c.as_ref().unwrap().get(r, 0);
            assert!((out.c.as_ref().unwrap().get(r, 0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut ps = ParamSet::new();
        let cell = RecurrentCell::new(&mut ps, "f", CellKind::LstmForget, 2, 3, &mut seeded_rng(3));
        let (_, _, bf) = cell.gate_params("f").unwrap();
        assert!(ps.get(bf).data().iter().all(|&b| b == 1.0));
        let (_, _, bi) = cell.gate_params("i").unwrap();
        assert!(ps.get(bi).data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn state_kind_mismatch() {
        let (ps, cell) = zero_cell(CellKind::Lstm, 1, 1);
        let state = RecurrentState {
            h: Tensor::vector(&[0.0]),
            c: None,
        };
        assert!(cell_step(&ps, &cell, &Tensor::vector(&[1.0]), &state).is_err());
    }

    #[test]
    fn residual_stack_with_zero_cells_is_identity() {
        let mut ps = ParamSet::new();
        let stack = StackedRnn::new(
            &mut ps,
            "s",
            CellKind::Rnn,
            3,
            3,
            3,
            true,
            &mut seeded_rng(4),
        )
        .unwrap();
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new(&ps);
        let mut states = stack.zero_state(&mut g, 1);
        let inputs = [[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]];
        let mut outs = Vec::new();
        for x in inputs {
            let xn = g.input(Tensor::vector(&x));
            let (out, next) = stack.step(&mut g, xn, &states).unwrap();
            states = next;
            outs.push(out);
        }
        g.forward().unwrap();
        for (x, out) in inputs.iter().zip(outs) {
            assert_eq!(g.value(out).data(), x);
        }
    }

    #[test]
    fn residual_requires_matching_sizes() {
        let mut ps = ParamSet::new();
        assert!(StackedRnn::new(
            &mut ps,
            "s",
            CellKind::Gru,
            2,
            3,
            1,
            true,
            &mut seeded_rng(0)
        )
        .is_err());
    }
}
