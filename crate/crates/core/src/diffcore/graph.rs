//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only arena: every operation pushes a node that
//! records its value and the handles of its parents. Parents always have a
//! smaller index than their children, so [`Graph::backward`] is a single
//! reverse sweep over the arena.
//!
//! Element-wise binary operations broadcast a `1`-sized dimension against the
//! other operand (`n x d` with `n x 1`, `1 x d` or `1 x 1`).

use crate::diffcore::params::{ParamId, ParamStore};
use crate::diffcore::special;
use crate::diffcore::tensor::{gemm, Operand, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Sigmoid(Var),
    Softplus(Var),
    Digamma(Var),
    Lgamma(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Transpose(Var),
    Dot(Var, Var),
    SqL2(Var),
    SoftmaxRows(Var),
    Element(Var, usize, usize),
    Column(Var, usize),
}

/// Operation tags accepted by [`Graph::forward_op`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Exp,
    Log,
    Abs,
    Sum,
    Mean,
    SumRows,
    Transpose,
    Dot,
    SqL2,
    Digamma,
    Lgamma,
    Sigmoid,
    Softplus,
    SoftmaxRows,
}

impl OpKind {
    pub const ALL: [OpKind; 20] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Relu,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Abs,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::SumRows,
        OpKind::Transpose,
        OpKind::Dot,
        OpKind::SqL2,
        OpKind::Digamma,
        OpKind::Lgamma,
        OpKind::Sigmoid,
        OpKind::Softplus,
        OpKind::SoftmaxRows,
    ];

    pub fn arity(self) -> usize {
        match self {
            OpKind::MatMul
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::Dot => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The differentiation arena. Rebuilt for every optimization step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when `v` does not influence the root or
    /// does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::Shape { op, lhs: a, rhs: b }),
    }
}

fn broadcast_zip(a: &Tensor, b: &Tensor, shape: [usize; 2], f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let [rows, cols] = shape;
    let mut out = Tensor::zeros(rows, cols);
    let (ar, ac) = (a.rows() > 1, a.cols() > 1);
    let (br, bc) = (b.rows() > 1, b.cols() > 1);
    for r in 0..rows {
        for c in 0..cols {
            let x = a.get(if ar { r } else { 0 }, if ac { c } else { 0 });
            let y = b.get(if br { r } else { 0 }, if bc { c } else { 0 });
            out.set(r, c, f(x, y));
        }
    }
    out
}

/// Sums `grad` down to `shape`, undoing a broadcast.
fn reduce_to(grad: Tensor, shape: [usize; 2]) -> Tensor {
    if grad.shape() == shape {
        return grad;
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for r in 0..grad.rows() {
        for c in 0..grad.cols() {
            let (tr, tc) = (
                if shape[0] == 1 { 0 } else { r },
                if shape[1] == 1 { 0 } else { c },
            );
            let cur = out.get(tr, tc);
            out.set(tr, tc, cur + grad.get(r, c));
        }
    }
    out
}

fn check_positive(op: &'static str, t: &Tensor) -> Result<()> {
    if let Some(x) = t.data().iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain {
            op,
            detail: format!("argument must be finite and strictly positive, got {x}"),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    /// A value that never receives an adjoint.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A leaf that receives an adjoint but is not tied to a parameter store.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Variable, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Copies the value of `x` into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let value = broadcast_zip(self.value(a), self.value(b), shape, f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).map(|a| a * k);
        self.unary(x, v, Op::Scale(x, k))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn offset(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).map(|a| a + k);
        self.unary(x, v, Op::Offset(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.unary(x, v, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.unary(x, v, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        check_positive("log", self.value(x))?;
        let v = self.value(x).map(f64::ln);
        Ok(self.unary(x, v, Op::Log(x)))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::abs);
        self.unary(x, v, Op::Abs(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.unary(x, v, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).map(softplus);
        self.unary(x, v, Op::Softplus(x))
    }

    pub fn digamma(&mut self, x: Var) -> Result<Var> {
        check_positive("digamma", self.value(x))?;
        let v = self.value(x).map(special::digamma);
        Ok(self.unary(x, v, Op::Digamma(x)))
    }

    pub fn lgamma(&mut self, x: Var) -> Result<Var> {
        check_positive("lgamma", self.value(x))?;
        let v = self.value(x).map(special::lgamma);
        Ok(self.unary(x, v, Op::Lgamma(x)))
    }

    /// Clamps into `[lo, hi]`; the adjoint is zero where clamping was active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let clipped = self
            .value(x)
            .data()
            .iter()
            .filter(|&&a| a < lo || a > hi)
            .count();
        if clipped > 0 {
            log::debug!("clamp to [{lo}, {hi}] touched {clipped} entries");
        }
        let v = self.value(x).map(|a| a.clamp(lo, hi));
        self.unary(x, v, Op::Clamp(x, lo, hi))
    }

    /// Sum of all entries, as a `1x1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.unary(x, v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        self.unary(x, v, Op::Mean(x))
    }

    /// `n x d -> n x 1` row sums.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let sums: Vec<f64> = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let v = Tensor::column(&sums);
        self.unary(x, v, Op::SumRows(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        self.unary(x, v, Op::Transpose(x))
    }

    /// Row-wise inner product: `n x d, n x d -> n x 1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "dot",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let dots: Vec<f64> = (0..ta.rows())
            .map(|r| {
                ta.row_slice(r)
                    .iter()
                    .zip(tb.row_slice(r))
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::column(&dots), Op::Dot(a, b), rg))
    }

    /// Squared Frobenius norm, as a `1x1` tensor.
    pub fn sq_l2(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).data().iter().map(|a| a * a).sum());
        self.unary(x, v, Op::SqL2(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for r in 0..v.rows() {
            let row = v.row_slice_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for a in row.iter_mut() {
                *a = (*a - max).exp();
                total += *a;
            }
            row.iter_mut().for_each(|a| *a /= total);
        }
        self.unary(x, v, Op::SoftmaxRows(x))
    }

    /// Single entry as a `1x1` tensor.
    pub fn element(&mut self, x: Var, r: usize, c: usize) -> Result<Var> {
        let t = self.value(x);
        if r >= t.rows() || c >= t.cols() {
            return Err(Error::Shape {
                op: "element",
                lhs: t.shape(),
                rhs: [r, c],
            });
        }
        let v = Tensor::scalar(t.get(r, c));
        Ok(self.unary(x, v, Op::Element(x, r, c)))
    }

    /// Column `c` as an `n x 1` tensor.
    pub fn column(&mut self, x: Var, c: usize) -> Result<Var> {
        let t = self.value(x);
        if c >= t.cols() {
            return Err(Error::Shape {
                op: "column",
                lhs: t.shape(),
                rhs: [t.rows(), c],
            });
        }
        let col: Vec<f64> = (0..t.rows()).map(|r| t.get(r, c)).collect();
        let v = Tensor::column(&col);
        Ok(self.unary(x, v, Op::Column(x, c)))
    }

    /// Tag-dispatched entry point covering every registered forward op.
    pub fn forward_op(&mut self, kind: OpKind, args: &[Var]) -> Result<Var> {
        if args.len() != kind.arity() {
            return Err(Error::contract(format!(
                "{kind:?} takes {} argument(s), got {}",
                kind.arity(),
                args.len()
            )));
        }
        let a = args[0];
        Ok(match kind {
            OpKind::MatMul => self.matmul(a, args[1])?,
            OpKind::Add => self.add(a, args[1])?,
            OpKind::Sub => self.sub(a, args[1])?,
            OpKind::Mul => self.mul(a, args[1])?,
            OpKind::Div => self.div(a, args[1])?,
            OpKind::Dot => self.dot(a, args[1])?,
            OpKind::Relu => self.relu(a),
            OpKind::Exp => self.exp(a),
            OpKind::Log => self.log(a)?,
            OpKind::Abs => self.abs(a),
            OpKind::Sum => self.sum(a),
            OpKind::Mean => self.mean(a),
            OpKind::SumRows => self.sum_rows(a),
            OpKind::Transpose => self.transpose(a),
            OpKind::SqL2 => self.sq_l2(a),
            OpKind::Digamma => self.digamma(a)?,
            OpKind::Lgamma => self.lgamma(a)?,
            OpKind::Sigmoid => self.sigmoid(a),
            OpKind::Softplus => self.softplus(a),
            OpKind::SoftmaxRows => self.softmax_rows(a),
        })
    }

    /// Reverse sweep from a scalar root. The root adjoint is 1.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let shape = self.shape(root);
        if shape != [1, 1] {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {shape:?}"
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[i].as_ref() else { continue };
            let contributions = self.local_grads(node, g);
            for (parent, grad) in contributions {
                if !self.rg(parent) {
                    continue;
                }
                match &mut adj[parent.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(Gradients { adjoints: adj })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &node.value;
        match node.op {
            Op::Constant | Op::Variable | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let mut out_a = Vec::with_capacity(2);
                if self.rg(a) {
                    let mut da = Tensor::zeros(val(a).rows(), val(a).cols());
                    gemm(Operand::plain(g), Operand::transposed(val(b)), &mut da, 0.0);
                    out_a.push((a, da));
                }
                if self.rg(b) {
                    let mut db = Tensor::zeros(val(b).rows(), val(b).cols());
                    gemm(Operand::transposed(val(a)), Operand::plain(g), &mut db, 0.0);
                    out_a.push((b, db));
                }
                out_a
            }
            Op::Add(a, b) => vec![
                (a, reduce_to(g.clone(), val(a).shape())),
                (b, reduce_to(g.clone(), val(b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (a, reduce_to(g.clone(), val(a).shape())),
                (b, reduce_to(g.map(|x| -x), val(b).shape())),
            ],
            Op::Mul(a, b) => {
                let s = g.shape();
                vec![
                    (
                        a,
                        reduce_to(broadcast_zip(g, val(b), s, |x, y| x * y), val(a).shape()),
                    ),
                    (
                        b,
                        reduce_to(broadcast_zip(g, val(a), s, |x, y| x * y), val(b).shape()),
                    ),
                ]
            }
            Op::Div(a, b) => {
                let s = g.shape();
                let da = broadcast_zip(g, val(b), s, |x, y| x / y);
                // d(a/b)/db = -(a/b)/b
                let ratio_over_b = broadcast_zip(out, val(b), s, |q, y| q / y);
                let db = g.zip_map(&ratio_over_b, |x, r| -x * r);
                vec![
                    (a, reduce_to(da, val(a).shape())),
                    (b, reduce_to(db, val(b).shape())),
                ]
            }
            Op::Scale(x, k) => vec![(x, g.map(|a| a * k))],
            Op::Offset(x) => vec![(x, g.clone())],
            Op::Relu(x) => vec![(x, g.zip_map(val(x), |d, a| if a > 0.0 { d } else { 0.0 }))],
            Op::Exp(x) => vec![(x, g.zip_map(out, |d, e| d * e))],
            Op::Log(x) => vec![(x, g.zip_map(val(x), |d, a| d / a))],
            Op::Abs(x) => vec![(x, g.zip_map(val(x), |d, a| d * sign(a)))],
            Op::Sigmoid(x) => vec![(x, g.zip_map(out, |d, s| d * s * (1.0 - s)))],
            Op::Softplus(x) => vec![(x, g.zip_map(val(x), |d, a| d * sigmoid(a)))],
            Op::Digamma(x) => vec![(x, g.zip_map(val(x), |d, a| d * special::trigamma(a)))],
            Op::Lgamma(x) => vec![(x, g.zip_map(val(x), |d, a| d * special::digamma(a)))],
            Op::Clamp(x, lo, hi) => vec![(
                x,
                g.zip_map(val(x), |d, a| if a >= lo && a <= hi { d } else { 0.0 }),
            )],
            Op::Sum(x) => {
                let t = val(x);
                vec![(x, Tensor::full(t.rows(), t.cols(), g.item()))]
            }
            Op::Mean(x) => {
                let t = val(x);
                let k = g.item() / t.len().max(1) as f64;
                vec![(x, Tensor::full(t.rows(), t.cols(), k))]
            }
            Op::SumRows(x) => {
                let t = val(x);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let gr = g.get(r, 0);
                    d.row_slice_mut(r).iter_mut().for_each(|a| *a = gr);
                }
                vec![(x, d)]
            }
            Op::Transpose(x) => vec![(x, g.transpose())],
            Op::Dot(a, b) => {
                let scale_rows = |t: &Tensor| {
                    let mut d = t.clone();
                    for r in 0..d.rows() {
                        let gr = g.get(r, 0);
                        d.row_slice_mut(r).iter_mut().for_each(|v| *v *= gr);
                    }
                    d
                };
                vec![(a, scale_rows(val(b))), (b, scale_rows(val(a)))]
            }
            Op::SqL2(x) => {
                let k = 2.0 * g.item();
                vec![(x, val(x).map(|a| k * a))]
            }
            Op::SoftmaxRows(x) => {
                let mut d = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (s, gr) = (out.row_slice(r), g.row_slice(r));
                    let inner: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, slot) in d.row_slice_mut(r).iter_mut().enumerate() {
                        *slot = s[c] * (gr[c] - inner);
                    }
                }
                vec![(x, d)]
            }
            Op::Element(x, r, c) => {
                let t = val(x);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                d.set(r, c, g.item());
                vec![(x, d)]
            }
            Op::Column(x, c) => {
                let t = val(x);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    d.set(r, c, g.get(r, 0));
                }
                vec![(x, d)]
            }
        }
    }

    /// Parameters that appear in this graph, with the node that carries them.
    pub(crate) fn param_nodes(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, Var(i))),
                _ => None,
            })
    }
}

fn sign(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[-1.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn digamma_difference_is_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[1.0, 2.0]));
        let y = g.digamma(x).unwrap();
        let v = g.value(y).data();
        assert!((v[1] - v[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn matmul_shape() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(3, 1));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), [2, 1]);
        let bad = g.matmul(a, a).unwrap_err();
        assert!(bad.to_string().contains("matmul"));
    }

    #[test]
    fn domain_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[1.0, 0.0]));
        assert!(matches!(
            g.digamma(x),
            Err(Error::Domain { op: "digamma", .. })
        ));
        assert!(matches!(
            g.lgamma(x),
            Err(Error::Domain { op: "lgamma", .. })
        ));
        let y = g.constant(Tensor::row(&[-2.0]));
        assert!(matches!(g.log(y), Err(Error::Domain { .. })));
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(&[1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let root = g.sum(sq);
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
        assert_eq!(grads.get(root).unwrap().item(), 1.0);
    }

    #[test]
    fn lgamma_gradient_is_digamma() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.lgamma(x).unwrap();
        let grads = g.backward(y).unwrap();
        // psi(3) = 3/2 - euler_gamma
        assert!((grads.get(x).unwrap().item() - 0.922_784_335_098_467_1).abs() < 1e-13);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(0.0));
        let y = g.relu(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_column_and_scalar() {
        let mut g = Graph::new();
        let m = g.variable(Tensor::new(2, 2, vec![1., 2., 3., 4.]).unwrap());
        let col = g.variable(Tensor::column(&[10., 20.]));
        let k = g.variable(Tensor::scalar(2.0));
        let a = g.add(m, col).unwrap();
        let b = g.mul(a, k).unwrap();
        assert_eq!(g.value(b).data(), &[22., 24., 46., 48.]);
        let root = g.sum(b);
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(col).unwrap().data(), &[4.0, 4.0]);
        assert_eq!(grads.get(k).unwrap().item(), 11. + 12. + 23. + 24.);
        let row3 = g.constant(Tensor::row(&[1., 2., 3.]));
        assert!(g.add(m, row3).is_err());
    }

    #[test]
    fn constants_get_no_adjoint() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(3.0));
        let x = g.variable(Tensor::scalar(2.0));
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 3.0);
    }

    #[test]
    fn detach_stops_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(2.0));
        let d = g.detach(x);
        let y = g.mul(d, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(2, 3, vec![1000., 0., -5., 0., 0., 0.]).unwrap());
        let s = g.softmax_rows(x);
        for r in 0..2 {
            let total: f64 = g.value(s).row_slice(r).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!((g.value(s).get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }
}
