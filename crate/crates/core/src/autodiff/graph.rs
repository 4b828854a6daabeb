//! Reverse-mode automatic differentiation over an explicit computation graph.
//!
//! Nodes are appended in construction order, which is already a topological
//! order: every operation can only reference nodes that exist. `forward`
//! evaluates pending nodes in insertion order and `backward` walks them in
//! reverse, accumulating gradients into parents. A graph borrows the
//! parameter set it reads from; parameter gradients come back as a
//! [`Gradients`] value so the optimizer can apply them once the graph is gone.

use crate::autodiff::params::{Gradients, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Input,
    Parameter(ParamId),
    /// Columns of a parameter matrix selected by index, laid side by side.
    LookupColumns {
        param: ParamId,
        ids: Vec<usize>,
    },
    MatMul(NodeId, NodeId),
    /// Elementwise sum; a single-column operand is broadcast across columns.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    CMult(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Step(NodeId),
    /// Column-wise softmax.
    Softmax(NodeId),
    /// `Σ_j w_j · −log softmax(x[:, j])[t_j]`, a scalar.
    PickNegLogSoftmax {
        scores: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    SquaredDistance(NodeId, NodeId),
    Sum(NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    Column(NodeId, usize),
    RepeatCols(NodeId, usize),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Parameter(_) => "parameter",
            Op::LookupColumns { .. } => "lookup_column",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::CMult(..) => "cmult",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Step(_) => "step",
            Op::Softmax(_) => "softmax",
            Op::PickNegLogSoftmax { .. } => "pick_neg_log_softmax",
            Op::SquaredDistance(..) => "squared_distance",
            Op::Sum(_) => "sum",
            Op::Scale(..) => "scale",
            Op::Transpose(_) => "transpose",
            Op::Column(..) => "column",
            Op::RepeatCols(..) => "repeat_cols",
        }
    }
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    evaluated: usize,
    node_grads: Vec<Option<Tensor>>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            evaluated: 0,
            node_grads: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Option<Tensor>) -> NodeId {
        let id = NodeId(self.nodes.len());
        let evaluated = value.is_some() && self.evaluated == self.nodes.len();
        self.nodes.push(Node { op, value });
        if evaluated {
            self.evaluated += 1;
        }
        id
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, Some(value))
    }

    pub fn parameter(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Parameter(id), None)
    }

    pub fn lookup(&mut self, param: ParamId, id: usize) -> NodeId {
        self.lookup_columns(param, vec![id])
    }

    pub fn lookup_columns(&mut self, param: ParamId, ids: Vec<usize>) -> NodeId {
        self.push(Op::LookupColumns { param, ids }, None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b), None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b), None)
    }

    /// `w · x + b`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> NodeId {
        let wx = self.matmul(w, x);
        self.add(wx, b)
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        self.push(Op::ConcatRows(parts), None)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        self.push(Op::ConcatCols(parts), None)
    }

    pub fn cmult(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::CMult(a, b), None)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Tanh(x), None)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid(x), None)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x), None)
    }

    pub fn step(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Step(x), None)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softmax(x), None)
    }

    pub fn pick_neg_log_softmax(&mut self, scores: NodeId, target: usize) -> NodeId {
        self.pick_neg_log_softmax_batch(scores, vec![target], vec![1.0])
    }

    pub fn pick_neg_log_softmax_batch(
        &mut self,
        scores: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
    ) -> NodeId {
        self.push(
            Op::PickNegLogSoftmax {
                scores,
                targets,
                weights,
            },
            None,
        )
    }

    pub fn squared_distance(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::SquaredDistance(a, b), None)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x), None)
    }

    /// Sum of several scalar nodes.
    pub fn sum_all(&mut self, xs: &[NodeId]) -> NodeId {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(x, factor), None)
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Transpose(x), None)
    }

    pub fn column(&mut self, x: NodeId, j: usize) -> NodeId {
        self.push(Op::Column(x, j), None)
    }

    pub fn repeat_cols(&mut self, x: NodeId, n: usize) -> NodeId {
        self.push(Op::RepeatCols(x, n), None)
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Value of an evaluated node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        self.try_value(id)
            .unwrap_or_else(|| panic!("node {} has not been evaluated", id.0))
    }

    pub fn try_value(&self, id: NodeId) -> Option<&Tensor> {
        match &self.nodes[id.0].op {
            Op::Parameter(p) => Some(self.params.get(*p)),
            _ => self.nodes[id.0].value.as_ref(),
        }
    }

    /// Evaluate every pending node in insertion order and return the value of
    /// the last node.
    pub fn forward(&mut self) -> Result<&Tensor> {
        if self.nodes.is_empty() {
            return Err(Error::Graph("forward on an empty graph".into()));
        }
        while self.evaluated < self.nodes.len() {
            let i = self.evaluated;
            let value = self.eval_node(i)?;
            self.nodes[i].value = value;
            self.evaluated += 1;
        }
        Ok(self.value(NodeId(self.nodes.len() - 1)))
    }

    fn shape_err(&self, i: usize, detail: String) -> Error {
        Error::Shape {
            node: i,
            op: self.nodes[i].op.name(),
            detail,
        }
    }

    fn eval_node(&self, i: usize) -> Result<Option<Tensor>> {
        let v = |id: &NodeId| self.value(*id);
        let out = match &self.nodes[i].op {
            Op::Input => return Ok(self.nodes[i].value.clone()),
            Op::Parameter(_) => return Ok(None),
            Op::LookupColumns { param, ids } => {
                let m = self.params.get(*param);
                let mut out = Tensor::zeros(m.rows(), ids.len());
                for (j, &id) in ids.iter().enumerate() {
                    if id >= m.cols() {
                        return Err(self.shape_err(
                            i,
                            format!("column {id} out of range for {:?}", m.shape()),
                        ));
                    }
                    for r in 0..m.rows() {
                        out.set(r, j, m.get(r, id));
                    }
                }
                out
            }
            Op::MatMul(a, b) => {
                let (a, b) = (v(a), v(b));
                if a.cols() != b.rows() {
                    return Err(self.shape_err(i, format!("{:?} x {:?}", a.shape(), b.shape())));
                }
                a.matmul(b)
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                let (a, b) = (v(a), v(b));
                if a.shape() == b.shape() {
                    a.zip_map(b, |x, y| x + sign * y)
                } else if a.rows() == b.rows() && b.cols() == 1 {
                    let mut out = a.clone();
                    for r in 0..a.rows() {
                        for c in 0..a.cols() {
                            out.add_at(r, c, sign * b.get(r, 0));
                        }
                    }
                    out
                } else if a.rows() == b.rows() && a.cols() == 1 {
                    let mut out = b.map(|x| sign * x);
                    for r in 0..b.rows() {
                        for c in 0..b.cols() {
                            out.add_at(r, c, a.get(r, 0));
                        }
                    }
                    out
                } else {
                    return Err(self.shape_err(i, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
            }
            Op::ConcatRows(parts) => {
                let cols = v(&parts[0]).cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    let t = v(p);
                    if t.cols() != cols {
                        return Err(
                            self.shape_err(i, format!("column counts {} and {}", cols, t.cols()))
                        );
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::from_vec(rows, cols, data)?
            }
            Op::ConcatCols(parts) => {
                let rows = v(&parts[0]).rows();
                let cols: usize = parts.iter().map(|p| v(p).cols()).sum();
                let mut out = Tensor::zeros(rows, cols);
                let mut offset = 0;
                for p in parts {
                    let t = v(p);
                    if t.rows() != rows {
                        return Err(
                            self.shape_err(i, format!("row counts {} and {}", rows, t.rows()))
                        );
                    }
                    for r in 0..rows {
                        for c in 0..t.cols() {
                            out.set(r, offset + c, t.get(r, c));
                        }
                    }
                    offset += t.cols();
                }
                out
            }
            Op::CMult(a, b) => {
                let (a, b) = (v(a), v(b));
                if a.shape() != b.shape() {
                    return Err(self.shape_err(i, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                a.zip_map(b, |x, y| x * y)
            }
            Op::Tanh(x) => v(x).map(f64::tanh),
            Op::Sigmoid(x) => v(x).map(sigmoid),
            Op::Relu(x) => v(x).map(|x| x.max(0.0)),
            Op::Step(x) => v(x).map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Softmax(x) => {
                let x = v(x);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for c in 0..x.cols() {
                    let p = crate::tensor::softmax_slice(&x.column_vec(c));
                    out.set_column(c, &p);
                }
                out
            }
            Op::PickNegLogSoftmax {
                scores,
                targets,
                weights,
            } => {
                let s = v(scores);
                if targets.len() != s.cols() || weights.len() != s.cols() {
                    return Err(self.shape_err(
                        i,
                        format!(
                            "{} targets / {} weights for {} columns",
                            targets.len(),
                            weights.len(),
                            s.cols()
                        ),
                    ));
                }
                let mut total = 0.0;
                for (c, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if t >= s.rows() {
                        return Err(self.shape_err(i, format!("target {t} >= {}", s.rows())));
                    }
                    if w == 0.0 {
                        continue;
                    }
                    let col = s.column_vec(c);
                    let lse = crate::tensor::log_sum_exp(&col);
                    total += w * (lse - col[t]);
                }
                Tensor::scalar(total)
            }
            Op::SquaredDistance(a, b) => {
                let (a, b) = (v(a), v(b));
                if a.shape() != b.shape() {
                    return Err(self.shape_err(i, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                Tensor::scalar(
                    a.data()
                        .iter()
                        .zip(b.data())
                        .map(|(x, y)| (x - y).powi(2))
                        .sum(),
                )
            }
            Op::Sum(x) => Tensor::scalar(v(x).sum()),
            Op::Scale(x, f) => v(x).map(|x| x * f),
            Op::Transpose(x) => v(x).transpose(),
            Op::Column(x, j) => {
                let x = v(x);
                if *j >= x.cols() {
                    return Err(self.shape_err(i, format!("column {j} of {:?}", x.shape())));
                }
                x.column(*j)
            }
            Op::RepeatCols(x, n) => {
                let x = v(x);
                if x.cols() != 1 {
                    return Err(
                        self.shape_err(i, format!("expected a column, got {:?}", x.shape()))
                    );
                }
                let mut out = Tensor::zeros(x.rows(), *n);
                for r in 0..x.rows() {
                    for c in 0..*n {
                        out.set(r, c, x.get(r, 0));
                    }
                }
                out
            }
        };
        Ok(Some(out))
    }

    /// Backpropagate from the last node, which must be a scalar.
    pub fn backward(&mut self) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Graph("backward on an empty graph".into()));
        }
        self.backward_from(NodeId(self.nodes.len() - 1))
    }

    pub fn backward_from(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.evaluated <= loss.0 {
            return Err(Error::Graph("backward called before forward".into()));
        }
        let loss_shape = self.value(loss).shape();
        if loss_shape != (1, 1) {
            return Err(Error::Graph(format!(
                "backward requires a scalar loss, node {} has shape {:?}",
                loss.0, loss_shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut param_grads = Gradients::new(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut grads, &mut param_grads)?;
            grads[i] = Some(g);
        }
        self.node_grads = grads;
        Ok(param_grads)
    }

    /// Gradient of the last loss with respect to a node, after `backward`.
    pub fn node_grad(&self, id: NodeId) -> Option<&Tensor> {
        self.node_grads.get(id.0).and_then(Option::as_ref)
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        param_grads: &mut Gradients,
    ) -> Result<()> {
        fn acc(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        }
        let out = self.value(NodeId(i));
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Parameter(p) => {
                param_grads.slot(*p, out.shape()).add_assign(g);
            }
            Op::LookupColumns { param, ids } => {
                let shape = self.params.get(*param).shape();
                let slot = param_grads.slot(*param, shape);
                for (j, &id) in ids.iter().enumerate() {
                    for r in 0..shape.0 {
                        slot.add_at(r, id, g.get(r, j));
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(grads, *a, g.matmul_t(bv));
                acc(grads, *b, av.t_matmul(g));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                for (id, s) in [(*a, 1.0), (*b, sign)] {
                    let shape = self.value(id).shape();
                    let delta = if shape == g.shape() {
                        g.map(|x| s * x)
                    } else {
                        // broadcast operand: sum over columns
                        let mut d = Tensor::zeros(shape.0, 1);
                        for r in 0..g.rows() {
                            let row_sum: f64 = (0..g.cols()).map(|c| g.get(r, c)).sum();
                            d.set(r, 0, s * row_sum);
                        }
                        d
                    };
                    acc(grads, id, delta);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.value(*p).shape();
                    let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    acc(grads, *p, Tensor::from_vec(rows, cols, data)?);
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.value(*p).shape();
                    let mut d = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            d.set(r, c, g.get(r, offset + c));
                        }
                    }
                    acc(grads, *p, d);
                    offset += cols;
                }
            }
            Op::CMult(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(grads, *a, g.zip_map(bv, |x, y| x * y));
                acc(grads, *b, g.zip_map(av, |x, y| x * y));
            }
            Op::Tanh(x) => acc(grads, *x, g.zip_map(out, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(x) => acc(grads, *x, g.zip_map(out, |g, y| g * y * (1.0 - y))),
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(
                    grads,
                    *x,
                    g.zip_map(xv, |g, x| if x > 0.0 { g } else { 0.0 }),
                );
            }
            Op::Step(_) => {
                return Err(Error::Graph(format!(
                    "node {i}: the step function has no usable derivative; backward through it is not supported"
                )));
            }
            Op::Softmax(x) => {
                let mut d = Tensor::zeros(out.rows(), out.cols());
                for c in 0..out.cols() {
                    let dot: f64 = (0..out.rows()).map(|r| g.get(r, c) * out.get(r, c)).sum();
                    for r in 0..out.rows() {
                        d.set(r, c, out.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                acc(grads, *x, d);
            }
            Op::PickNegLogSoftmax {
                scores,
                targets,
                weights,
            } => {
                let s = self.value(*scores);
                let upstream = g.scalar_value();
                let mut d = Tensor::zeros(s.rows(), s.cols());
                for (c, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let p = crate::tensor::softmax_slice(&s.column_vec(c));
                    for (r, pr) in p.into_iter().enumerate() {
                        let onehot = if r == t { 1.0 } else { 0.0 };
                        d.set(r, c, upstream * w * (pr - onehot));
                    }
                }
                acc(grads, *scores, d);
            }
            Op::SquaredDistance(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let upstream = g.scalar_value();
                let diff = av.zip_map(bv, |x, y| 2.0 * upstream * (x - y));
                acc(grads, *b, diff.map(|x| -x));
                acc(grads, *a, diff);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                acc(grads, *x, Tensor::filled(r, c, g.scalar_value()));
            }
            Op::Scale(x, f) => acc(grads, *x, g.map(|v| v * f)),
            Op::Transpose(x) => acc(grads, *x, g.transpose()),
            Op::Column(x, j) => {
                let (r, c) = self.value(*x).shape();
                let mut d = Tensor::zeros(r, c);
                for row in 0..r {
                    d.set(row, *j, g.get(row, 0));
                }
                acc(grads, *x, d);
            }
            Op::RepeatCols(x, _) => {
                let mut d = Tensor::zeros(g.rows(), 1);
                for r in 0..g.rows() {
                    d.set(r, 0, (0..g.cols()).map(|c| g.get(r, c)).sum());
                }
                acc(grads, *x, d);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_forward() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::from_vec(1, 1, vec![2.0]).unwrap());
        let b = ps.add("b", Tensor::vector(&[1.0]));
        let mut g = Graph::new(&ps);
        let x = g.input(Tensor::vector(&[3.0]));
        let (wn, bn) = (g.parameter(w), g.parameter(b));
        g.affine(wn, x, bn);
        assert_eq!(g.forward().unwrap().scalar_value(), 7.0);
    }

    #[test]
    fn activations_at_zero() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let x = g.input(Tensor::vector(&[0.0]));
        let t = g.tanh(x);
        let s = g.sigmoid(x);
        g.forward().unwrap();
        assert_eq!(g.value(t).scalar_value(), 0.0);
        assert_eq!(g.value(s).scalar_value(), 0.5);
    }

    #[test]
    fn pick_neg_log_softmax_uniform() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let s = g.input(Tensor::vector(&[0.0, 0.0]));
        g.pick_neg_log_softmax(s, 0);
        let v = g.forward().unwrap().scalar_value();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tanh_derivative_and_saturation() {
        let mut ps = ParamSet::new();
        let p = ps.add("x", Tensor::vector(&[0.0, 20.0]));
        let mut g = Graph::new(&ps);
        let x = g.parameter(p);
        let t = g.tanh(x);
        g.sum(t);
        g.forward().unwrap();
        let grads = g.backward().unwrap();
        let d = grads.get(p).unwrap();
        assert_eq!(d.get(0, 0), 1.0);
        assert!(d.get(1, 0) < 1e-15);
    }

    #[test]
    fn relu_gradient_gate() {
        let mut ps = ParamSet::new();
        let p = ps.add("x", Tensor::vector(&[-1.0, 2.0]));
        let mut g = Graph::new(&ps);
        let x = g.parameter(p);
        let r = g.relu(x);
        g.sum(r);
        g.forward().unwrap();
        let grads = g.backward().unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut ps = ParamSet::new();
        let p = ps.add("x", Tensor::vector(&[1.0]));
        let mut g = Graph::new(&ps);
        let x = g.parameter(p);
        g.sum(x);
        assert!(matches!(g.backward(), Err(Error::Graph(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut ps = ParamSet::new();
        let p = ps.add("x", Tensor::vector(&[1.0, 2.0]));
        let mut g = Graph::new(&ps);
        let x = g.parameter(p);
        g.tanh(x);
        g.forward().unwrap();
        assert!(g.backward().is_err());
    }

    #[test]
    fn step_is_forward_only() {
        let mut ps = ParamSet::new();
        let p = ps.add("x", Tensor::vector(&[-1.0, 2.0]));
        let mut g = Graph::new(&ps);
        let x = g.parameter(p);
        let s = g.step(x);
        g.sum(s);
        assert_eq!(g.forward().unwrap().scalar_value(), 1.0);
        let err = g.backward().unwrap_err();
        assert!(err.to_string().contains("step"));
    }

    #[test]
    fn shape_error_names_node() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let a = g.input(Tensor::zeros(2, 3));
        let b = g.input(Tensor::zeros(2, 3));
        g.matmul(a, b);
        match g.forward() {
            Err(Error::Shape { node, op, .. }) => {
                assert_eq!(node, 2);
                assert_eq!(op, "matmul");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn reused_parameter_sums_path_gradients() {
        // y = sum(w ⊙ w ⊙ x) with w used twice equals the graph with a copy of w.
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::vector(&[0.3, -0.7]));
        let w2 = ps.add("w_copy", Tensor::vector(&[0.3, -0.7]));
        let xs = Tensor::vector(&[1.5, 2.0]);

        let mut g = Graph::new(&ps);
        let x = g.input(xs.clone());
        let a = g.parameter(w);
        let b = g.parameter(w);
        let ab = g.cmult(a, b);
        let y = g.cmult(ab, x);
        g.sum(y);
        g.forward().unwrap();
        let shared = g.backward().unwrap();

        let mut g = Graph::new(&ps);
        let x = g.input(xs);
        let a = g.parameter(w);
        let b = g.parameter(w2);
        let ab = g.cmult(a, b);
        let y = g.cmult(ab, x);
        g.sum(y);
        g.forward().unwrap();
        let split = g.backward().unwrap();
        let summed = split
            .get(w)
            .unwrap()
            .zip_map(split.get(w2).unwrap(), |a, b| a + b);
        assert_eq!(shared.get(w).unwrap(), &summed);
    }

    #[test]
    fn softmax_columns_sum_to_one() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let x = g.input(Tensor::from_vec(3, 2, vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.0]).unwrap());
        g.softmax(x);
        let p = g.forward().unwrap().clone();
        for c in 0..2 {
            let s: f64 = p.column_vec(c).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lookup_scatters_into_selected_column() {
        let mut ps = ParamSet::new();
        let m = ps.add(
            "m",
            Tensor::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap(),
        );
        let mut g = Graph::new(&ps);
        let col = g.lookup(m, 1);
        g.sum(col);
        assert_eq!(g.forward().unwrap().scalar_value(), 7.0);
        let grads = g.backward().unwrap();
        assert_eq!(grads.get(m).unwrap().data(), &[0., 1., 0., 0., 1., 0.]);
    }

    #[test]
    fn incremental_forward() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let x = g.input(Tensor::vector(&[1.0]));
        let y = g.scale(x, 3.0);
        g.forward().unwrap();
        assert_eq!(g.value(y).scalar_value(), 3.0);
        let z = g.scale(y, 2.0);
        g.forward().unwrap();
        assert_eq!(g.value(z).scalar_value(), 6.0);
    }
}
