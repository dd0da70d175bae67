//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive application is appended to the tape together with the
//! ids of its inputs. Outputs are kept, so backward never recomputes a
//! forward value. Input ids always precede output ids, which makes the tape
//! its own topological order.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// The differentiable primitives. Anything the model computes is a
/// composition of these.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[m x k] . [k x n]`
    MatMul,
    Add,
    Sub,
    ElemMul,
    Scale(f64),
    /// Horizontal concatenation; all inputs share a row count.
    ConcatCols,
    /// Vertical concatenation; all inputs share a column count.
    ConcatRows,
    SliceCols { start: usize, len: usize },
    Transpose,
    Sigmoid,
    Relu,
    Tanh,
    SoftmaxRows,
    /// Row softmax where row `i` only sees columns `0..=i`; masked entries are exactly 0.
    CausalSoftmaxRows,
    /// Per-row standardization without learned gain or bias.
    LayerNormRows,
    /// `[n x d] -> [1 x d]`
    MeanRows,
    SumAll,
    /// Gathers rows of a table: `[V x d] -> [len x d]`.
    RowLookup(Vec<usize>),
    /// `x . W + b` with `b` a `1 x n` row broadcast over every row.
    Affine,
    Log,
    /// `-sum_r logp[r, index[r]]` over a matrix of log-probabilities.
    NegPick(Vec<usize>),
    /// `[1 x d] -> [n x d]`
    RepeatRows(usize),
    /// Multiplies by a fixed, already scaled keep-mask.
    Dropout(Vec<f64>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::ElemMul => "elem_mul",
            Primitive::Scale(_) => "scale",
            Primitive::ConcatCols => "concat_cols",
            Primitive::ConcatRows => "concat_rows",
            Primitive::SliceCols { .. } => "slice_cols",
            Primitive::Transpose => "transpose",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::SoftmaxRows => "softmax_rows",
            Primitive::CausalSoftmaxRows => "causal_softmax_rows",
            Primitive::LayerNormRows => "layer_norm_rows",
            Primitive::MeanRows => "mean_rows",
            Primitive::SumAll => "sum_all",
            Primitive::RowLookup(_) => "row_lookup",
            Primitive::Affine => "affine",
            Primitive::Log => "log",
            Primitive::NegPick(_) => "neg_pick",
            Primitive::RepeatRows(_) => "repeat_rows",
            Primitive::Dropout(_) => "dropout",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::ConcatCols | Primitive::ConcatRows => None,
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::ElemMul => Some(2),
            Primitive::Affine => Some(3),
            _ => Some(1),
        }
    }

    /// Evaluates the primitive on concrete inputs.
    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let op = self.name();
        match self.arity() {
            Some(n) if n != inputs.len() => {
                return Err(Error::Contract(alloc::format!(
                    "{op} expects {n} inputs, got {}",
                    inputs.len()
                )))
            }
            None if inputs.is_empty() => {
                return Err(Error::Contract(alloc::format!("{op} expects at least one input")))
            }
            _ => {}
        }
        let shapes = || inputs.iter().map(|t| t.shape()).collect::<Vec<_>>();
        match self {
            Primitive::MatMul => inputs[0].matmul(inputs[1]),
            Primitive::Add | Primitive::Sub | Primitive::ElemMul => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.shape() != b.shape() {
                    return Err(Error::dim(op, &shapes()));
                }
                let data = a
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(&x, &y)| match self {
                        Primitive::Add => x + y,
                        Primitive::Sub => x - y,
                        _ => x * y,
                    })
                    .collect();
                Tensor::new(a.rows(), a.cols(), data)
            }
            Primitive::Scale(s) => Ok(inputs[0].map(|v| v * s)),
            Primitive::ConcatCols => {
                let rows = inputs[0].rows();
                if inputs.iter().any(|t| t.rows() != rows) {
                    return Err(Error::dim(op, &shapes()));
                }
                let cols: usize = inputs.iter().map(|t| t.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for t in inputs {
                        data.extend_from_slice(t.row_slice(r));
                    }
                }
                Tensor::new(rows, cols, data)
            }
            Primitive::ConcatRows => {
                let cols = inputs[0].cols();
                if inputs.iter().any(|t| t.cols() != cols) {
                    return Err(Error::dim(op, &shapes()));
                }
                let rows: usize = inputs.iter().map(|t| t.rows()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for t in inputs {
                    data.extend_from_slice(t.values());
                }
                Tensor::new(rows, cols, data)
            }
            Primitive::SliceCols { start, len } => {
                let x = inputs[0];
                if *len == 0 || start + len > x.cols() {
                    return Err(Error::Index {
                        op,
                        index: start + len,
                        bound: x.cols() + 1,
                    });
                }
                let mut data = Vec::with_capacity(x.rows() * len);
                for r in 0..x.rows() {
                    data.extend_from_slice(&x.row_slice(r)[*start..start + len]);
                }
                Tensor::new(x.rows(), *len, data)
            }
            Primitive::Transpose => Ok(inputs[0].transpose()),
            Primitive::Sigmoid => Ok(inputs[0].map(sigmoid)),
            Primitive::Relu => Ok(inputs[0].map(|v| if v > 0.0 { v } else { 0.0 })),
            Primitive::Tanh => Ok(inputs[0].map(libm::tanh)),
            Primitive::SoftmaxRows => Ok(softmax_rows(inputs[0], false)),
            Primitive::CausalSoftmaxRows => {
                let x = inputs[0];
                if x.cols() < x.rows() {
                    return Err(Error::dim(op, &shapes()));
                }
                Ok(softmax_rows(x, true))
            }
            Primitive::LayerNormRows => Ok(layer_norm_rows(inputs[0])),
            Primitive::MeanRows => {
                let x = inputs[0];
                let mut out = Tensor::zeros(1, x.cols());
                for r in 0..x.rows() {
                    for (o, &v) in out.values_mut().iter_mut().zip(x.row_slice(r)) {
                        *o += v;
                    }
                }
                let n = x.rows() as f64;
                Ok(out.map(|v| v / n))
            }
            Primitive::SumAll => Ok(Tensor::scalar(inputs[0].values().iter().sum())),
            Primitive::RowLookup(index) => {
                let table = inputs[0];
                if index.is_empty() {
                    return Err(Error::Contract("row_lookup with empty index".to_string()));
                }
                let mut data = Vec::with_capacity(index.len() * table.cols());
                for &i in index {
                    if i >= table.rows() {
                        return Err(Error::Index {
                            op,
                            index: i,
                            bound: table.rows(),
                        });
                    }
                    data.extend_from_slice(table.row_slice(i));
                }
                Tensor::new(index.len(), table.cols(), data)
            }
            Primitive::Affine => {
                let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
                if x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols() {
                    return Err(Error::dim(op, &shapes()));
                }
                let mut out = x.matmul(w)?;
                let n = out.cols();
                for (i, v) in out.values_mut().iter_mut().enumerate() {
                    *v += b.values()[i % n];
                }
                Ok(out)
            }
            Primitive::Log => Ok(inputs[0].map(libm::log)),
            Primitive::NegPick(index) => {
                let x = inputs[0];
                if index.len() != x.rows() {
                    return Err(Error::dim(op, &[x.shape(), (index.len(), 1)]));
                }
                let mut total = 0.0;
                for (r, &i) in index.iter().enumerate() {
                    if i >= x.cols() {
                        return Err(Error::Index {
                            op,
                            index: i,
                            bound: x.cols(),
                        });
                    }
                    total -= x.get(r, i);
                }
                Ok(Tensor::scalar(total))
            }
            Primitive::RepeatRows(n) => {
                let x = inputs[0];
                if x.rows() != 1 || *n == 0 {
                    return Err(Error::dim(op, &[x.shape(), (*n, 0)]));
                }
                let mut data = Vec::with_capacity(n * x.cols());
                for _ in 0..*n {
                    data.extend_from_slice(x.values());
                }
                Tensor::new(*n, x.cols(), data)
            }
            Primitive::Dropout(mask) => {
                let x = inputs[0];
                if mask.len() != x.len() {
                    return Err(Error::dim(op, &[x.shape(), (mask.len(), 1)]));
                }
                let data = x.values().iter().zip(mask).map(|(a, m)| a * m).collect();
                Tensor::new(x.rows(), x.cols(), data)
            }
        }
    }

    /// Vector-Jacobian product. Returns one gradient per input; entries are
    /// `None` where `wanted[i]` is false.
    pub fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        wanted: &[bool],
    ) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = vec![None; inputs.len()];
        let want = |i: usize| wanted[i];
        match self {
            Primitive::MatMul => {
                if want(0) {
                    out[0] = Some(grad.matmul(&inputs[1].transpose()).expect("matmul shapes"));
                }
                if want(1) {
                    out[1] = Some(inputs[0].transpose().matmul(grad).expect("matmul shapes"));
                }
            }
            Primitive::Add => {
                out[0] = want(0).then(|| grad.clone());
                out[1] = want(1).then(|| grad.clone());
            }
            Primitive::Sub => {
                out[0] = want(0).then(|| grad.clone());
                out[1] = want(1).then(|| grad.map(|v| -v));
            }
            Primitive::ElemMul => {
                if want(0) {
                    out[0] = Some(zip_map(grad, inputs[1], |g, b| g * b));
                }
                if want(1) {
                    out[1] = Some(zip_map(grad, inputs[0], |g, a| g * a));
                }
            }
            Primitive::Scale(s) => out[0] = Some(grad.map(|v| v * s)),
            Primitive::ConcatCols => {
                let mut start = 0;
                for (i, t) in inputs.iter().enumerate() {
                    if want(i) {
                        out[i] = Some(
                            Primitive::SliceCols {
                                start,
                                len: t.cols(),
                            }
                            .forward(&[grad])
                            .expect("slice within concat"),
                        );
                    }
                    start += t.cols();
                }
            }
            Primitive::ConcatRows => {
                let cols = grad.cols();
                let mut start = 0;
                for (i, t) in inputs.iter().enumerate() {
                    let n = t.rows() * cols;
                    if want(i) {
                        let data = grad.values()[start..start + n].to_vec();
                        out[i] = Some(Tensor::new(t.rows(), cols, data).expect("rows"));
                    }
                    start += n;
                }
            }
            Primitive::SliceCols { start, len } => {
                let x = inputs[0];
                let mut g = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for c in 0..*len {
                        g.set(r, start + c, grad.get(r, c));
                    }
                }
                out[0] = Some(g);
            }
            Primitive::Transpose => out[0] = Some(grad.transpose()),
            Primitive::Sigmoid => out[0] = Some(zip_map(grad, output, |g, y| g * y * (1.0 - y))),
            Primitive::Relu => {
                out[0] = Some(zip_map(grad, inputs[0], |g, x| if x > 0.0 { g } else { 0.0 }))
            }
            Primitive::Tanh => out[0] = Some(zip_map(grad, output, |g, y| g * (1.0 - y * y))),
            Primitive::SoftmaxRows | Primitive::CausalSoftmaxRows => {
                let mut g = Tensor::zeros(output.rows(), output.cols());
                for r in 0..output.rows() {
                    let y = output.row_slice(r);
                    let gy = grad.row_slice(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for c in 0..output.cols() {
                        g.set(r, c, y[c] * (gy[c] - dot));
                    }
                }
                out[0] = Some(g);
            }
            Primitive::LayerNormRows => {
                let x = inputs[0];
                let d = x.cols() as f64;
                let mut g = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let row = x.row_slice(r);
                    let mean = row.iter().sum::<f64>() / d;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                    let inv_std = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
                    let y = output.row_slice(r);
                    let gy = grad.row_slice(r);
                    let mean_g = gy.iter().sum::<f64>() / d;
                    let mean_gy = gy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d;
                    for c in 0..x.cols() {
                        g.set(r, c, inv_std * (gy[c] - mean_g - y[c] * mean_gy));
                    }
                }
                out[0] = Some(g);
            }
            Primitive::MeanRows => {
                let x = inputs[0];
                let n = x.rows() as f64;
                let row: Vec<f64> = grad.values().iter().map(|v| v / n).collect();
                out[0] = Some(repeat_row(&row, x.rows()));
            }
            Primitive::SumAll => {
                let x = inputs[0];
                out[0] = Some(Tensor::filled(x.rows(), x.cols(), grad.item()));
            }
            Primitive::RowLookup(index) => {
                let table = inputs[0];
                let mut g = Tensor::zeros(table.rows(), table.cols());
                let d = table.cols();
                for (r, &i) in index.iter().enumerate() {
                    let dst = &mut g.values_mut()[i * d..(i + 1) * d];
                    for (a, b) in dst.iter_mut().zip(grad.row_slice(r)) {
                        *a += b;
                    }
                }
                out[0] = Some(g);
            }
            Primitive::Affine => {
                let (x, w) = (inputs[0], inputs[1]);
                if want(0) {
                    out[0] = Some(grad.matmul(&w.transpose()).expect("affine shapes"));
                }
                if want(1) {
                    out[1] = Some(x.transpose().matmul(grad).expect("affine shapes"));
                }
                if want(2) {
                    let mut db = Tensor::zeros(1, grad.cols());
                    for r in 0..grad.rows() {
                        for (a, b) in db.values_mut().iter_mut().zip(grad.row_slice(r)) {
                            *a += b;
                        }
                    }
                    out[2] = Some(db);
                }
            }
            Primitive::Log => out[0] = Some(zip_map(grad, inputs[0], |g, x| g / x)),
            Primitive::NegPick(index) => {
                let x = inputs[0];
                let mut g = Tensor::zeros(x.rows(), x.cols());
                for (r, &i) in index.iter().enumerate() {
                    g.set(r, i, -grad.item());
                }
                out[0] = Some(g);
            }
            Primitive::RepeatRows(_) => {
                let mut g = Tensor::zeros(1, grad.cols());
                for r in 0..grad.rows() {
                    for (a, b) in g.values_mut().iter_mut().zip(grad.row_slice(r)) {
                        *a += b;
                    }
                }
                out[0] = Some(g);
            }
            Primitive::Dropout(mask) => {
                let data = grad.values().iter().zip(mask).map(|(g, m)| g * m).collect();
                out[0] = Some(Tensor::new(grad.rows(), grad.cols(), data).expect("mask"));
            }
        }
        out
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Tensor, causal: bool) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let visible = if causal { r + 1 } else { x.cols() };
        let row = &x.row_slice(r)[..visible];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| libm::exp(v - max)).collect();
        let sum: f64 = exps.iter().sum();
        for (c, e) in exps.iter().enumerate() {
            out.set(r, c, e / sum);
        }
    }
    out
}

fn layer_norm_rows(x: &Tensor) -> Tensor {
    let d = x.cols() as f64;
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row_slice(r);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv_std = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
        for (c, v) in row.iter().enumerate() {
            out.set(r, c, (v - mean) * inv_std);
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

fn repeat_row(row: &[f64], n: usize) -> Tensor {
    let mut data = Vec::with_capacity(row.len() * n);
    for _ in 0..n {
        data.extend_from_slice(row);
    }
    Tensor::new(n, row.len(), data).expect("non-empty")
}

#[derive(Clone, Debug)]
enum Origin {
    Param,
    Constant,
    Op(Primitive, Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node {
    origin: Origin,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// A single-use recording of one forward computation.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Binds a trainable leaf. Binding the same name twice returns the first
    /// handle, so shared parameters accumulate gradient from every use.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(Origin::Param, value.clone(), true);
        self.params.insert(name.to_string(), v);
        v
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Origin::Constant, value, false)
    }

    /// Copies the current value of `v` into a fresh constant leaf, cutting
    /// the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, origin: Origin, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            origin,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Applies `prim` to recorded inputs and records the result.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = prim.forward(&values)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(Origin::Op(prim, inputs.to_vec()), out, needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn elem_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::ElemMul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.apply(Primitive::ConcatCols, parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.apply(Primitive::ConcatRows, parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::SliceCols { start, len }, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SoftmaxRows, &[a])
    }

    pub fn causal_softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::CausalSoftmaxRows, &[a])
    }

    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::LayerNormRows, &[a])
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::MeanRows, &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SumAll, &[a])
    }

    pub fn row_lookup(&mut self, table: Var, index: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::RowLookup(index), &[table])
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Affine, &[x, w, b])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn neg_pick(&mut self, logp: Var, index: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::NegPick(index), &[logp])
    }

    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        self.apply(Primitive::RepeatRows(n), &[a])
    }

    /// Inverted dropout with a mask drawn from `rng`. A rate of zero records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(a);
        }
        if rate >= 1.0 {
            return Err(Error::Config(alloc::format!("dropout rate {rate} must be < 1")));
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.apply(Primitive::Dropout(mask), &[a])
    }

    /// Recomputes every recorded output from the leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.origin {
                Origin::Op(prim, inputs) => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|v| &values[v.0]).collect();
                    prim.forward(&ins)?
                }
                _ => node.value.clone(),
            };
            values.push(v);
        }
        Ok(values)
    }

    pub fn recorded_values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| &n.value)
    }

    /// Back-propagates from a scalar and returns `d loss / d param` for every
    /// parameter bound on this tape. Parameters the loss does not reach get
    /// zeros.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Origin::Op(prim, inputs) = &node.origin else {
                continue;
            };
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let wanted: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].needs_grad).collect();
            let input_grads = prim.backward(&values, &node.value, &g, &wanted);
            for (v, ig) in inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let shape = self.nodes[v.0].value.shape();
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}
