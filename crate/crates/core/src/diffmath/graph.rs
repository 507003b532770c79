//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node. Parameters are borrowed
//! from their [`ParamSet`] rather than copied, so building a graph for
//! inference costs no more than evaluating the layers. Calling
//! [`Graph::backward`] on a scalar node returns [`Gradients`] for every node
//! and every parameter that contributed to it.

use std::collections::HashMap;

use super::params::{ParamId, ParamSet};
use super::tensor::{softmax_rows, Tensor};
use crate::error::{DpiError, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Square,
    Sqrt,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Exp => x.exp(),
            Activation::Log => x.ln(),
            Activation::Square => x * x,
            Activation::Sqrt => x.sqrt(),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Exp => y,
            Activation::Log => 1.0 / x,
            Activation::Square => 2.0 * x,
            Activation::Sqrt => 0.5 / y,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Exp => "exp",
            Activation::Log => "log",
            Activation::Square => "square",
            Activation::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone)]
enum Op<'a> {
    Leaf,
    Param { set: &'a str, id: ParamId },
    Linear { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Min { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Offset { a: Var },
    Act { a: Var, act: Activation },
    Clamp { a: Var, lo: f64, hi: f64 },
    SoftmaxRows { a: Var },
    LogSoftmaxRows { a: Var },
    Sum { a: Var },
    Mean { a: Var },
    SumCols { a: Var },
    ConcatCols { a: Var, b: Var },
    SliceCols { a: Var, start: usize },
    RepeatRows { a: Var, times: usize },
    GatherCols { a: Var, idx: Vec<usize> },
    Reshape { a: Var },
    Conv2d { x: Var, w: Var, b: Var },
}

impl Op<'_> {
    fn label(&self) -> &'static str {
        match self {
            Op::Leaf => "input",
            Op::Param { .. } => "param",
            Op::Linear { .. } => "linear",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Div { .. } => "div",
            Op::Min { .. } => "min",
            Op::Scale { .. } => "scale",
            Op::Offset { .. } => "offset",
            Op::Act { act, .. } => act.label(),
            Op::Clamp { .. } => "clamp",
            Op::SoftmaxRows { .. } => "softmax",
            Op::LogSoftmaxRows { .. } => "log_softmax",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::SumCols { .. } => "sum_cols",
            Op::ConcatCols { .. } => "concat",
            Op::SliceCols { .. } => "slice",
            Op::RepeatRows { .. } => "repeat_rows",
            Op::GatherCols { .. } => "gather",
            Op::Reshape { .. } => "reshape",
            Op::Conv2d { .. } => "conv2d",
        }
    }
}

enum NodeValue<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

struct Node<'a> {
    value: NodeValue<'a>,
    op: Op<'a>,
}

/// Gradient of a single parameter produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct ParamGrad {
    pub set: String,
    pub id: ParamId,
    pub grad: Tensor,
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<ParamGrad>,
}

impl Gradients {
    /// Gradient with respect to any node, `None` if it did not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamGrad> {
        self.params.iter()
    }

    pub fn param(&self, set: &str, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|p| p.set == set && p.id == id)
            .map(|p| &p.grad)
    }
}

/// A recorded computation.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    param_nodes: HashMap<(*const ParamSet, usize), Var>,
    scope: String,
    first_non_finite: Option<String>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            scope: String::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Labels subsequently created nodes for error reporting.
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            NodeValue::Owned(t) => t,
            NodeValue::Borrowed(t) => t,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Fails with a numeric error naming the first operation that produced a
    /// non-finite value.
    pub fn ensure_finite(&self) -> Result<()> {
        match &self.first_non_finite {
            Some(loc) => Err(DpiError::numeric(loc.clone(), "non-finite value")),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op<'a>) -> Var {
        if self.first_non_finite.is_none() && !value.all_finite() {
            let scope = if self.scope.is_empty() {
                "graph"
            } else {
                &self.scope
            };
            self.first_non_finite = Some(format!("{scope}/{}", op.label()));
        }
        self.nodes.push(Node {
            value: NodeValue::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported but which belongs to no parameter set.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.input(t)
    }

    pub fn param(&mut self, set: &'a ParamSet, id: ParamId) -> Var {
        let key = (set as *const ParamSet, id.0);
        if let Some(v) = self.param_nodes.get(&key) {
            return *v;
        }
        self.nodes.push(Node {
            value: NodeValue::Borrowed(set.get(id)),
            op: Op::Param {
                set: set.name(),
                id,
            },
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(key, v);
        v
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, i) = (xv.rows(), xv.cols());
        assert_eq!(wv.shape().len(), 2, "linear weight must be 2-D");
        assert_eq!(
            wv.shape()[0],
            i,
            "linear: input width {i} vs weight {:?}",
            wv.shape()
        );
        let o = wv.shape()[1];
        assert_eq!(bv.len(), o, "linear bias length");
        let mut out = vec![0.0; n * o];
        matmul_into(xv.data(), wv.data(), &mut out, n, i, o);
        for row in out.chunks_mut(o) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        self.push(Tensor::from_parts(vec![n, o], out), Op::Linear { x, w, b })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = (av.rows(), av.cols());
        assert_eq!(bv.rows(), k, "matmul inner dimension");
        let m = bv.cols();
        let mut out = vec![0.0; n * m];
        matmul_into(av.data(), bv.data(), &mut out, n, k, m);
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul { a, b })
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op<'a>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape(),
            bv.shape(),
            "elementwise {} shape mismatch",
            op.label()
        );
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x / y, Op::Div { a, b })
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, f64::min, Op::Min { a, b })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = map(self.value(a), |x| x * c);
        self.push(t, Op::Scale { a, c })
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let t = map(self.value(a), |x| x + c);
        self.push(t, Op::Offset { a })
    }

    pub fn act(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let t = map(self.value(a), |x| act.apply(x));
        self.push(t, Op::Act { a, act })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.act(a, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.act(a, Activation::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.act(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.act(a, Activation::Tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.act(a, Activation::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.act(a, Activation::Log)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.act(a, Activation::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.act(a, Activation::Sqrt)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = map(self.value(a), |x| x.clamp(lo, hi));
        self.push(t, Op::Clamp { a, lo, hi })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = softmax_rows(self.value(a));
        self.push(t, Op::SoftmaxRows { a })
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let t = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(t, Op::LogSoftmaxRows { a })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean { a })
    }

    /// Row sums of an `[n, m]` tensor as `[n, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        let data = av.data().chunks(m.max(1)).map(|r| r.iter().sum()).collect();
        self.push(Tensor::from_parts(vec![n, 1], data), Op::SumCols { a })
    }

    /// Row-wise inner product of two `[n, m]` tensors, shape `[n, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum_cols(p)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.rows();
        assert_eq!(bv.rows(), n, "concat row mismatch");
        let (ma, mb) = (av.cols(), bv.cols());
        let mut data = Vec::with_capacity(n * (ma + mb));
        for r in 0..n {
            data.extend_from_slice(av.row_slice(r));
            data.extend_from_slice(bv.row_slice(r));
        }
        self.push(
            Tensor::from_parts(vec![n, ma + mb], data),
            Op::ConcatCols { a, b },
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        assert!(start + len <= m, "slice out of range");
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&av.row_slice(r)[start..start + len]);
        }
        self.push(
            Tensor::from_parts(vec![n, len], data),
            Op::SliceCols { a, start },
        )
    }

    /// Repeats every row `times` times consecutively: `[n, m] -> [n*times, m]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(n * times * m);
        for r in 0..n {
            for _ in 0..times {
                data.extend_from_slice(av.row_slice(r));
            }
        }
        self.push(
            Tensor::from_parts(vec![n * times, m], data),
            Op::RepeatRows { a, times },
        )
    }

    /// Picks one column per row: `[n, m] -> [n, 1]`.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), idx.len(), "gather index count");
        let data = idx.iter().enumerate().map(|(r, &c)| av.at(r, c)).collect();
        self.push(
            Tensor::from_parts(vec![idx.len(), 1], data),
            Op::GatherCols {
                a,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self
            .value(a)
            .clone()
            .reshape(shape)
            .expect("reshape volume mismatch");
        self.push(t, Op::Reshape { a })
    }

    /// Stride-1 convolution with zero padding that preserves spatial size.
    /// `x: [n, c, h, w]`, `w: [o, c, k, k]` with odd `k`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let dims = ConvDims::new(xv.shape(), wv.shape());
        assert_eq!(bv.len(), dims.o, "conv bias length");
        let out = conv_forward(xv.data(), wv.data(), bv.data(), &dims);
        self.push(
            Tensor::from_parts(vec![dims.n, dims.o, dims.h, dims.w], out),
            Op::Conv2d { x, w, b },
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(DpiError::usage(
                "backward called on a node that was never computed",
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(DpiError::usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Op::Param { set, id } = node.op {
                if let Some(g) = &grads[i] {
                    params.push(ParamGrad {
                        set: set.to_string(),
                        id,
                        grad: g.clone(),
                    });
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, ii, o) = (xv.rows(), xv.cols(), wv.shape()[1]);
                let mut dx = vec![0.0; n * ii];
                matmul_bt_into(g.data(), wv.data(), &mut dx, n, o, ii);
                let mut dw = vec![0.0; ii * o];
                matmul_at_into(xv.data(), g.data(), &mut dw, n, ii, o);
                let mut db = vec![0.0; o];
                for row in g.data().chunks(o) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
                accumulate(grads, *w, wv.shape(), dw);
                let bshape = self.shape(*b).to_vec();
                accumulate(grads, *b, &bshape, db);
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                let mut da = vec![0.0; n * k];
                matmul_bt_into(g.data(), bv.data(), &mut da, n, m, k);
                let mut db = vec![0.0; k * m];
                matmul_at_into(av.data(), g.data(), &mut db, n, k, m);
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
                accumulate(grads, *b, g.shape(), g.data().to_vec());
            }
            Op::Sub { a, b } => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
                accumulate(grads, *b, g.shape(), g.data().iter().map(|v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = zip3(g, bv, |g, y| g * y);
                let db = zip3(g, av, |g, x| g * x);
                accumulate(grads, *a, g.shape(), da);
                accumulate(grads, *b, g.shape(), db);
            }
            Op::Div { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = zip3(g, bv, |g, y| g / y);
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(av.data().iter().zip(bv.data()))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                accumulate(grads, *a, g.shape(), da);
                accumulate(grads, *b, g.shape(), db);
            }
            Op::Min { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = vec![0.0; g.len()];
                let mut db = vec![0.0; g.len()];
                for k in 0..g.len() {
                    if av.data()[k] <= bv.data()[k] {
                        da[k] = g.data()[k];
                    } else {
                        db[k] = g.data()[k];
                    }
                }
                accumulate(grads, *a, g.shape(), da);
                accumulate(grads, *b, g.shape(), db);
            }
            Op::Scale { a, c } => {
                let d = g.data().iter().map(|v| v * c).collect();
                accumulate(grads, *a, g.shape(), d);
            }
            Op::Offset { a } => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
            }
            Op::Act { a, act } => {
                let xv = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(out.data()))
                    .map(|(g, (x, y))| g * act.derivative(*x, *y))
                    .collect();
                accumulate(grads, *a, g.shape(), d);
            }
            Op::Clamp { a, lo, hi } => {
                let xv = self.value(*a);
                let d = zip3(g, xv, |g, x| if x >= *lo && x <= *hi { g } else { 0.0 });
                accumulate(grads, *a, g.shape(), d);
            }
            Op::SoftmaxRows { a } => {
                let m = out.cols();
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), sr) in d
                    .chunks_mut(m)
                    .zip(g.data().chunks(m))
                    .zip(out.data().chunks(m))
                {
                    let inner: f64 = gr.iter().zip(sr).map(|(g, s)| g * s).sum();
                    for k in 0..m {
                        dr[k] = sr[k] * (gr[k] - inner);
                    }
                }
                accumulate(grads, *a, g.shape(), d);
            }
            Op::LogSoftmaxRows { a } => {
                let m = out.cols();
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), lr) in d
                    .chunks_mut(m)
                    .zip(g.data().chunks(m))
                    .zip(out.data().chunks(m))
                {
                    let total: f64 = gr.iter().sum();
                    for k in 0..m {
                        dr[k] = gr[k] - lr[k].exp() * total;
                    }
                }
                accumulate(grads, *a, g.shape(), d);
            }
            Op::Sum { a } => {
                let shape = self.shape(*a).to_vec();
                let n = self.value(*a).len();
                accumulate(grads, *a, &shape, vec![g.item(); n]);
            }
            Op::Mean { a } => {
                let shape = self.shape(*a).to_vec();
                let n = self.value(*a).len();
                accumulate(grads, *a, &shape, vec![g.item() / n as f64; n]);
            }
            Op::SumCols { a } => {
                let av = self.value(*a);
                let m = av.cols();
                let mut d = Vec::with_capacity(av.len());
                for gv in g.data() {
                    d.extend(std::iter::repeat(*gv).take(m));
                }
                accumulate(grads, *a, av.shape(), d);
            }
            Op::ConcatCols { a, b } => {
                let (ma, mb) = (self.value(*a).cols(), self.value(*b).cols());
                let mut da = Vec::with_capacity(g.rows() * ma);
                let mut db = Vec::with_capacity(g.rows() * mb);
                for row in g.data().chunks(ma + mb) {
                    da.extend_from_slice(&row[..ma]);
                    db.extend_from_slice(&row[ma..]);
                }
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                accumulate(grads, *a, &sa, da);
                accumulate(grads, *b, &sb, db);
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let m = av.cols();
                let len = g.cols();
                let mut d = vec![0.0; av.len()];
                for (r, row) in g.data().chunks(len).enumerate() {
                    d[r * m + start..r * m + start + len].copy_from_slice(row);
                }
                accumulate(grads, *a, av.shape(), d);
            }
            Op::RepeatRows { a, times } => {
                let av = self.value(*a);
                let m = av.cols();
                let mut d = vec![0.0; av.len()];
                for (r, block) in g.data().chunks(m * times).enumerate() {
                    for row in block.chunks(m) {
                        for (k, v) in row.iter().enumerate() {
                            d[r * m + k] += v;
                        }
                    }
                }
                accumulate(grads, *a, av.shape(), d);
            }
            Op::GatherCols { a, idx } => {
                let av = self.value(*a);
                let m = av.cols();
                let mut d = vec![0.0; av.len()];
                for (r, &c) in idx.iter().enumerate() {
                    d[r * m + c] = g.data()[r];
                }
                accumulate(grads, *a, av.shape(), d);
            }
            Op::Reshape { a } => {
                let shape = self.shape(*a).to_vec();
                accumulate(grads, *a, &shape, g.data().to_vec());
            }
            Op::Conv2d { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let dims = ConvDims::new(xv.shape(), wv.shape());
                let (dx, dw, db) = conv_backward(xv.data(), wv.data(), g.data(), &dims);
                accumulate(grads, *x, xv.shape(), dx);
                accumulate(grads, *w, wv.shape(), dw);
                let bshape = self.shape(*b).to_vec();
                accumulate(grads, *b, &bshape, db);
            }
        }
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect())
}

fn zip3(g: &Tensor, t: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.data()
        .iter()
        .zip(t.data())
        .map(|(g, v)| f(*g, *v))
        .collect()
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(&d) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), d)),
    }
}

/// `out[n, m] += a[n, k] * b[k, m]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for r in 0..n {
        let orow = &mut out[r * m..(r + 1) * m];
        for (kk, av) in a[r * k..(r + 1) * k].iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n, k] += g[n, m] * b[k, m]^T`
fn matmul_bt_into(g: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    for r in 0..n {
        let grow = &g[r * m..(r + 1) * m];
        for kk in 0..k {
            let brow = &b[kk * m..(kk + 1) * m];
            out[r * k + kk] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k, m] += a[n, k]^T * g[n, m]`
fn matmul_at_into(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for r in 0..n {
        let grow = &g[r * m..(r + 1) * m];
        for (kk, av) in a[r * k..(r + 1) * k].iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * m..(kk + 1) * m];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
}

impl ConvDims {
    fn new(x: &[usize], w: &[usize]) -> Self {
        assert_eq!(x.len(), 4, "conv input must be [n, c, h, w]");
        assert_eq!(w.len(), 4, "conv kernel must be [o, c, k, k]");
        assert_eq!(x[1], w[1], "conv channel mismatch");
        assert_eq!(w[2], w[3], "conv kernel must be square");
        assert_eq!(w[2] % 2, 1, "conv kernel size must be odd");
        ConvDims {
            n: x[0],
            c: x[1],
            h: x[2],
            w: x[3],
            o: w[0],
            k: w[2],
        }
    }
}

fn conv_forward(x: &[f64], w: &[f64], b: &[f64], d: &ConvDims) -> Vec<f64> {
    let pad = (d.k / 2) as isize;
    let (hw, kk) = (d.h * d.w, d.k * d.k);
    let mut out = vec![0.0; d.n * d.o * hw];
    for n in 0..d.n {
        for o in 0..d.o {
            let obase = (n * d.o + o) * hw;
            out[obase..obase + hw].iter_mut().for_each(|v| *v = b[o]);
            for c in 0..d.c {
                let xbase = (n * d.c + c) * hw;
                let wbase = (o * d.c + c) * kk;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = w[wbase + ky * d.k + kx];
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        for y in 0..d.h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= d.h as isize {
                                continue;
                            }
                            for xx in 0..d.w {
                                let sx = xx as isize + dx;
                                if sx < 0 || sx >= d.w as isize {
                                    continue;
                                }
                                out[obase + y * d.w + xx] +=
                                    wv * x[xbase + sy as usize * d.w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(x: &[f64], w: &[f64], g: &[f64], d: &ConvDims) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = (d.k / 2) as isize;
    let (hw, kk) = (d.h * d.w, d.k * d.k);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.o];
    for n in 0..d.n {
        for o in 0..d.o {
            let gbase = (n * d.o + o) * hw;
            db[o] += g[gbase..gbase + hw].iter().sum::<f64>();
            for c in 0..d.c {
                let xbase = (n * d.c + c) * hw;
                let wbase = (o * d.c + c) * kk;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let widx = wbase + ky * d.k + kx;
                        let wv = w[widx];
                        let dy = ky as isize - pad;
                        let dxo = kx as isize - pad;
                        let mut acc = 0.0;
                        for y in 0..d.h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= d.h as isize {
                                continue;
                            }
                            for xx in 0..d.w {
                                let sx = xx as isize + dxo;
                                if sx < 0 || sx >= d.w as isize {
                                    continue;
                                }
                                let xi = xbase + sy as usize * d.w + sx as usize;
                                let gv = g[gbase + y * d.w + xx];
                                acc += gv * x[xi];
                                dx[xi] += gv * wv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, 9.0]]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(DpiError::Usage(_))));
    }

    #[test]
    fn backward_on_foreign_node_is_usage_error() {
        let mut other = Graph::new();
        let a = other.input(Tensor::scalar(1.0));
        let b = other.input(Tensor::scalar(1.0));
        let _ = other.add(a, b);
        let empty = Graph::new();
        let v = Var(2);
        assert!(matches!(empty.backward(v), Err(DpiError::Usage(_))));
    }

    #[test]
    fn identity_linear_is_identity() {
        let mut ps = ParamSet::new("p");
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let w = ps.add("w", eye).unwrap();
        let b = ps.add("b", Tensor::zeros(&[3])).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::row(&[0.25, -4.0, 7.5]));
        let (wv, bv) = (g.param(&ps, w), g.param(&ps, b));
        let y = g.linear(x, wv, bv);
        assert_eq!(g.value(y).data(), &[0.25, -4.0, 7.5]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut ps = ParamSet::new("p");
        let w = ps.add("w", Tensor::row(&[2.0])).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let wv = g.param(&ps, w);
            let sq = g.square(wv);
            let l = g.sum(sq);
            let grads = g.backward(l).unwrap();
            drop(g);
            ps.accumulate(&grads).unwrap();
        }
        assert_eq!(ps.grad(w).data(), &[8.0]);
    }

    #[test]
    fn non_finite_is_reported_with_scope() {
        let mut g = Graph::new();
        g.set_scope("encoder.head");
        let x = g.input(Tensor::row(&[-1.0]));
        let _ = g.ln(x);
        let err = g.ensure_finite().unwrap_err();
        assert!(err.to_string().contains("encoder.head/log"), "{err}");
    }

    #[test]
    fn shared_param_node_is_reused() {
        let mut ps = ParamSet::new("p");
        let w = ps.add("w", Tensor::row(&[3.0])).unwrap();
        let mut g = Graph::new();
        let a = g.param(&ps, w);
        let b = g.param(&ps, w);
        assert_eq!(a, b);
        let p = g.mul(a, b);
        let l = g.sum(p);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.param("p", w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn conv_with_centre_tap_copies_input() {
        let mut ps = ParamSet::new("c");
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let w = ps.add("w", k).unwrap();
        let b = ps.add("b", Tensor::zeros(&[1])).unwrap();
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let mut g = Graph::new();
        let xv = g.input(Tensor::new(vec![1, 1, 4, 4], x.clone()).unwrap());
        let (wv, bv) = (g.param(&ps, w), g.param(&ps, b));
        let y = g.conv2d(xv, wv, bv);
        assert_eq!(g.value(y).data(), x.as_slice());
    }
}
