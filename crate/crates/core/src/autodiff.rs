//! Tape-based reverse-mode automatic differentiation.
//!
//! Every forward primitive appends one record to a [`Tape`]. A single call to
//! [`Tape::backward`] walks the records in reverse and returns gradients for
//! the named parameters that were pulled onto the tape with [`Tape::param`].
//! Tensors are viewed as matrices whose columns are the last axis, so rank-3
//! inputs behave like stacked rows for every elementwise primitive.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{ParamSet, Tensor};

/// Additive fill used by [`Primitive::MaskedFill`].
pub const MASK_FILL: f64 = -1e9;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    /// Elementwise; the right operand may be a rank-1 vector spanning the last axis.
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Relu,
    /// Normalizes every row (last axis) with a max-shifted softmax.
    SoftmaxRows,
    ConcatLastDim,
    /// Stacks inputs with equal column counts along the row axis.
    ConcatRows,
    /// Adds all rows together: `[m, n] -> [1, n]`.
    SumRows,
    /// Sum of every component: `-> [1]`.
    Sum,
    Scale(f64),
    /// Sets masked positions to [`MASK_FILL`]. The mask covers either the whole
    /// tensor or one row, in which case it is repeated for every row.
    MaskedFill(Vec<bool>),
    /// Inverted dropout; identity unless the tape is in training mode.
    Dropout(f64),
    Transpose,
    Reshape(Vec<usize>),
    SliceRows {
        start: usize,
        len: usize,
    },
    SliceCols {
        start: usize,
        len: usize,
    },
    /// Row lookup into a `[vocab, d]` table: `-> [indices.len(), d]`.
    Gather(Vec<usize>),
    Ln,
    Clamp {
        lo: f64,
        hi: f64,
    },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Relu => "relu",
            Primitive::SoftmaxRows => "softmax_rows",
            Primitive::ConcatLastDim => "concat_last_dim",
            Primitive::ConcatRows => "concat_rows",
            Primitive::SumRows => "sum_rows",
            Primitive::Sum => "sum",
            Primitive::Scale(_) => "scale",
            Primitive::MaskedFill(_) => "masked_fill",
            Primitive::Dropout(_) => "dropout",
            Primitive::Transpose => "transpose",
            Primitive::Reshape(_) => "reshape",
            Primitive::SliceRows { .. } => "slice_rows",
            Primitive::SliceCols { .. } => "slice_cols",
            Primitive::Gather(_) => "gather",
            Primitive::Ln => "ln",
            Primitive::Clamp { .. } => "clamp",
        }
    }
}

/// Parses the parameter-free kinds by name. Parameterized kinds (`scale`,
/// `dropout`, ...) must be constructed directly.
impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => Primitive::MatMul,
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "tanh" => Primitive::Tanh,
            "sigmoid" => Primitive::Sigmoid,
            "relu" => Primitive::Relu,
            "softmax_rows" | "softmax-rows" => Primitive::SoftmaxRows,
            "concat_last_dim" | "concat-last-dim" => Primitive::ConcatLastDim,
            "concat_rows" => Primitive::ConcatRows,
            "sum_rows" | "sum-rows" => Primitive::SumRows,
            "sum" => Primitive::Sum,
            "transpose" => Primitive::Transpose,
            "ln" => Primitive::Ln,
            other => return Err(Error::UnknownPrimitive(other.to_string())),
        })
    }
}

#[derive(Debug)]
struct Record {
    prim: Primitive,
    inputs: Vec<Var>,
    /// Per-element multiplier kept by dropout.
    saved: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    record: Option<Record>,
}

enum Mode {
    Eval,
    Train(SeededRng),
}

pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    mode: Mode,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Evaluation tape: dropout is the identity.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            mode: Mode::Eval,
            consumed: false,
        }
    }

    /// Training tape: dropout draws its masks from `rng`.
    pub fn training(rng: SeededRng) -> Self {
        Tape {
            mode: Mode::Train(rng),
            ..Tape::new()
        }
    }

    pub fn is_training(&self) -> bool {
        matches!(self.mode, Mode::Train(_))
    }

    /// Hands the dropout generator back so a caller can thread it through
    /// successive tapes.
    pub fn into_rng(self) -> Option<SeededRng> {
        match self.mode {
            Mode::Train(rng) => Some(rng),
            Mode::Eval => None,
        }
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

    /// Scalar value of a one-element tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, None)
    }

    /// Pulls a named parameter onto the tape. Repeated calls return the same leaf.
    pub fn param(&mut self, name: &str, params: &ParamSet) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = params.require(name)?.clone();
        let v = self.push(t, None);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn push(&mut self, value: Tensor, record: Option<Record>) -> Var {
        self.nodes.push(Node { value, record });
        Var(self.nodes.len() - 1)
    }

    /// Records one primitive applied to `inputs`.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (value, saved) = self.forward(&prim, inputs)?;
        let record = Record {
            prim,
            inputs: inputs.to_vec(),
            saved,
        };
        Ok(self.push(value, Some(record)))
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
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SoftmaxRows, &[a])
    }
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatLastDim, parts)
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatRows, parts)
    }
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SumRows, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }
    pub fn masked_fill(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        self.apply(Primitive::MaskedFill(mask.to_vec()), &[a])
    }
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        self.apply(Primitive::Dropout(rate), &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[a])
    }
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::SliceRows { start, len }, &[a])
    }
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::SliceCols { start, len }, &[a])
    }
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        self.apply(Primitive::Gather(indices.to_vec()), &[table])
    }
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Ln, &[a])
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(Primitive::Clamp { lo, hi }, &[a])
    }

    fn forward(&mut self, prim: &Primitive, inputs: &[Var]) -> Result<(Tensor, Vec<f64>)> {
        let op = prim.name();
        let arity = |n: usize| {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::Arity {
                    op,
                    expected: n,
                    got: inputs.len(),
                })
            }
        };
        match prim {
            Primitive::ConcatLastDim | Primitive::ConcatRows => {
                if inputs.is_empty() {
                    return Err(Error::Arity {
                        op,
                        expected: 1,
                        got: 0,
                    });
                }
            }
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul => arity(2)?,
            _ => arity(1)?,
        }
        let nothing = Vec::new();
        let out = match prim {
            Primitive::MatMul => {
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(mismatch(op, a, b));
                }
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let data = matmul(a.data(), b.data(), m, k, n);
                Tensor::new(vec![m, n], data)?
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                check_broadcast(op, a, b)?;
                let bd = b.data();
                let w = bd.len();
                let f: fn(f64, f64) -> f64 = match prim {
                    Primitive::Add => |x, y| x + y,
                    Primitive::Sub => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bd[i % w]))
                    .collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Primitive::Tanh => map(self.value(inputs[0]), libm::tanh),
            Primitive::Sigmoid => map(self.value(inputs[0]), sigmoid),
            Primitive::Relu => map(self.value(inputs[0]), |x| if x > 0.0 { x } else { 0.0 }),
            Primitive::Ln => map(self.value(inputs[0]), libm::log),
            Primitive::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                map(self.value(inputs[0]), |x| x.clamp(lo, hi))
            }
            Primitive::Scale(c) => {
                let c = *c;
                map(self.value(inputs[0]), |x| c * x)
            }
            Primitive::SoftmaxRows => {
                let a = self.value(inputs[0]);
                let cols = a.cols();
                let mut data = a.data().to_vec();
                for row in data.chunks_mut(cols) {
                    softmax_in_place(row);
                }
                Tensor::new(a.shape().to_vec(), data)?
            }
            Primitive::ConcatLastDim => {
                let first = self.value(inputs[0]);
                let rows = first.rows();
                let mut cols = 0;
                for &v in inputs {
                    let t = self.value(v);
                    if t.rows() != rows || t.rank() != first.rank() {
                        return Err(mismatch(op, first, t));
                    }
                    cols += t.cols();
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row(r));
                    }
                }
                let mut shape = first.shape().to_vec();
                *shape.last_mut().expect("rank >= 1") = cols;
                Tensor::new(shape, data)?
            }
            Primitive::ConcatRows => {
                let first = self.value(inputs[0]);
                let cols = first.cols();
                let mut data = Vec::new();
                for &v in inputs {
                    let t = self.value(v);
                    if t.cols() != cols {
                        return Err(mismatch(op, first, t));
                    }
                    data.extend_from_slice(t.data());
                }
                let rows = data.len() / cols;
                Tensor::new(vec![rows, cols], data)?
            }
            Primitive::SumRows => {
                let a = self.value(inputs[0]);
                let cols = a.cols();
                let mut data = vec![0.0; cols];
                for row in a.data().chunks(cols) {
                    for (acc, x) in data.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                Tensor::new(vec![1, cols], data)?
            }
            Primitive::Sum => Tensor::scalar(self.value(inputs[0]).data().iter().sum()),
            Primitive::MaskedFill(mask) => {
                let a = self.value(inputs[0]);
                if mask.len() != a.len() && mask.len() != a.cols() {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: a.shape().to_vec(),
                        rhs: vec![mask.len()],
                    });
                }
                let w = mask.len();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| if mask[i % w] { MASK_FILL } else { x })
                    .collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Primitive::Dropout(rate) => {
                let rate = *rate;
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::DropoutRate(rate));
                }
                let a = self.value(inputs[0]).clone();
                match &mut self.mode {
                    Mode::Train(rng) if rate > 0.0 => {
                        let keep = 1.0 / (1.0 - rate);
                        let scale: Vec<f64> = (0..a.len())
                            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                            .collect();
                        let data = a.data().iter().zip(&scale).map(|(x, s)| x * s).collect();
                        return Ok((Tensor::new(a.shape().to_vec(), data)?, scale));
                    }
                    _ => a,
                }
            }
            Primitive::Transpose => {
                let a = self.value(inputs[0]);
                if a.rank() != 2 {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: a.shape().to_vec(),
                        rhs: vec![],
                    });
                }
                let (m, n) = (a.shape()[0], a.shape()[1]);
                Tensor::new(vec![n, m], transpose(a.data(), m, n))?
            }
            Primitive::Reshape(shape) => {
                let a = self.value(inputs[0]);
                let n: usize = shape.iter().product();
                if n != a.len() {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: a.shape().to_vec(),
                        rhs: shape.clone(),
                    });
                }
                Tensor::new(shape.clone(), a.data().to_vec())?
            }
            Primitive::SliceRows { start, len } => {
                let a = self.value(inputs[0]);
                if *len == 0 || start + len > a.rows() || a.rank() > 2 {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: a.shape().to_vec(),
                        rhs: vec![*start, *len],
                    });
                }
                let c = a.cols();
                Tensor::new(
                    vec![*len, c],
                    a.data()[start * c..(start + len) * c].to_vec(),
                )?
            }
            Primitive::SliceCols { start, len } => {
                let a = self.value(inputs[0]);
                if *len == 0 || start + len > a.cols() {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: a.shape().to_vec(),
                        rhs: vec![*start, *len],
                    });
                }
                let mut data = Vec::with_capacity(a.rows() * len);
                for r in 0..a.rows() {
                    data.extend_from_slice(&a.row(r)[*start..start + len]);
                }
                let mut shape = a.shape().to_vec();
                *shape.last_mut().expect("rank >= 1") = *len;
                Tensor::new(shape, data)?
            }
            Primitive::Gather(indices) => {
                let a = self.value(inputs[0]);
                if a.rank() != 2 || indices.is_empty() || indices.iter().any(|&i| i >= a.shape()[0])
                {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: a.shape().to_vec(),
                        rhs: vec![indices.iter().copied().max().unwrap_or(0)],
                    });
                }
                let mut data = Vec::with_capacity(indices.len() * a.cols());
                for &i in indices {
                    data.extend_from_slice(a.row(i));
                }
                Tensor::new(vec![indices.len(), a.cols()], data)?
            }
        };
        Ok((out, nothing))
    }

    /// Returns `d loss / d p` for every entry of `params`. Parameters that the
    /// loss does not reach get zero tensors. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var, params: &ParamSet) -> Result<ParamSet> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.value(loss).shape();
        if shape != [1] && shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let Some(rec) = &node.record else {
                grads[idx] = Some(g);
                continue;
            };
            let contributions = self.local_backward(rec, &node.value, &g);
            for (input, dg) in rec.inputs.iter().zip(contributions) {
                let Some(dg) = dg else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(dg),
                }
            }
        }

        let mut out = ParamSet::new();
        for (name, t) in params.iter() {
            let grad = match self.params.get(name) {
                Some(v) if v.0 <= loss.0 => grads[v.0].take(),
                _ => None,
            };
            let g = match grad {
                Some(data) => Tensor::new(t.shape().to_vec(), data)?,
                None => Tensor::zeros(t.shape()),
            };
            out.insert(name, g);
        }
        Ok(out)
    }

    /// Gradient contribution of one record to each of its inputs.
    fn local_backward(&self, rec: &Record, out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let val = |i: usize| self.value(rec.inputs[i]);
        match &rec.prim {
            Primitive::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let bt = transpose(b.data(), k, n);
                let at = transpose(a.data(), m, k);
                vec![Some(matmul(g, &bt, m, n, k)), Some(matmul(&at, g, k, m, n))]
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                let (a, b) = (val(0), val(1));
                let w = b.len();
                let (da, db_full): (Vec<f64>, Vec<f64>) = match rec.prim {
                    Primitive::Add => (g.to_vec(), g.to_vec()),
                    Primitive::Sub => (g.to_vec(), g.iter().map(|x| -x).collect()),
                    _ => {
                        let (ad, bd) = (a.data(), b.data());
                        (
                            g.iter().enumerate().map(|(i, gi)| gi * bd[i % w]).collect(),
                            g.iter().zip(ad).map(|(gi, x)| gi * x).collect(),
                        )
                    }
                };
                let db = if w == a.len() {
                    db_full
                } else {
                    let mut acc = vec![0.0; w];
                    for (i, d) in db_full.iter().enumerate() {
                        acc[i % w] += d;
                    }
                    acc
                };
                vec![Some(da), Some(db)]
            }
            Primitive::Tanh => vec![Some(zip(g, out.data(), |gi, y| gi * (1.0 - y * y)))],
            Primitive::Sigmoid => vec![Some(zip(g, out.data(), |gi, y| gi * y * (1.0 - y)))],
            Primitive::Relu => vec![Some(zip(
                g,
                val(0).data(),
                |gi, x| if x > 0.0 { gi } else { 0.0 },
            ))],
            Primitive::Ln => vec![Some(zip(g, val(0).data(), |gi, x| gi / x))],
            Primitive::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                vec![Some(zip(g, val(0).data(), |gi, x| {
                    if x >= lo && x <= hi {
                        gi
                    } else {
                        0.0
                    }
                }))]
            }
            Primitive::Scale(c) => vec![Some(g.iter().map(|x| c * x).collect())],
            Primitive::SoftmaxRows => {
                let cols = out.cols();
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), yr) in d
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(out.data().chunks(cols))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((di, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *di = yi * (gi - dot);
                    }
                }
                vec![Some(d)]
            }
            Primitive::ConcatLastDim => {
                let total = out.cols();
                let mut offset = 0;
                rec.inputs
                    .iter()
                    .map(|&v| {
                        let c = self.value(v).cols();
                        let mut d = Vec::with_capacity(self.value(v).len());
                        for row in g.chunks(total) {
                            d.extend_from_slice(&row[offset..offset + c]);
                        }
                        offset += c;
                        Some(d)
                    })
                    .collect()
            }
            Primitive::ConcatRows => {
                let mut offset = 0;
                rec.inputs
                    .iter()
                    .map(|&v| {
                        let n = self.value(v).len();
                        let d = g[offset..offset + n].to_vec();
                        offset += n;
                        Some(d)
                    })
                    .collect()
            }
            Primitive::SumRows => {
                let a = val(0);
                let cols = a.cols();
                vec![Some((0..a.len()).map(|i| g[i % cols]).collect())]
            }
            Primitive::Sum => vec![Some(vec![g[0]; val(0).len()])],
            Primitive::MaskedFill(mask) => {
                let w = mask.len();
                vec![Some(
                    g.iter()
                        .enumerate()
                        .map(|(i, &gi)| if mask[i % w] { 0.0 } else { gi })
                        .collect(),
                )]
            }
            Primitive::Dropout(_) => {
                if rec.saved.is_empty() {
                    vec![Some(g.to_vec())]
                } else {
                    vec![Some(zip(g, &rec.saved, |gi, s| gi * s))]
                }
            }
            Primitive::Transpose => {
                let a = val(0);
                let (m, n) = (a.shape()[0], a.shape()[1]);
                vec![Some(transpose(g, n, m))]
            }
            Primitive::Reshape(_) => vec![Some(g.to_vec())],
            Primitive::SliceRows { start, .. } => {
                let a = val(0);
                let mut d = vec![0.0; a.len()];
                let off = start * a.cols();
                d[off..off + g.len()].copy_from_slice(g);
                vec![Some(d)]
            }
            Primitive::SliceCols { start, len } => {
                let a = val(0);
                let c = a.cols();
                let mut d = vec![0.0; a.len()];
                for (r, gr) in g.chunks(*len).enumerate() {
                    d[r * c + start..r * c + start + len].copy_from_slice(gr);
                }
                vec![Some(d)]
            }
            Primitive::Gather(indices) => {
                let a = val(0);
                let c = a.cols();
                let mut d = vec![0.0; a.len()];
                for (gr, &i) in g.chunks(c).zip(indices) {
                    for (di, gi) in d[i * c..(i + 1) * c].iter_mut().zip(gr) {
                        *di += gi;
                    }
                }
                vec![Some(d)]
            }
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn check_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let same = a.shape() == b.shape();
    let row_vector = b.rank() == 1 && b.len() == a.cols();
    if same || row_vector {
        Ok(())
    } else {
        Err(mismatch(op, a, b))
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).expect("same shape")
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// `[m, k] x [k, n]`, row-major.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Absolute floor on the relative-error denominator so that components whose
/// true gradient is zero are judged by absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares tape gradients with central finite differences.
///
/// Returns the worst relative error `|analytic - numeric| / max(|analytic|,
/// |numeric|, GRAD_CHECK_FLOOR)` for every parameter name. `forward` must be
/// deterministic; it is run on evaluation tapes only.
pub fn grad_check<F>(mut forward: F, params: &ParamSet, step: f64) -> Result<BTreeMap<String, f64>>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, params)?;
        tape.backward(loss, params)?
    };
    let mut eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, p)?;
        Ok(tape.scalar(loss))
    };
    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut worst = BTreeMap::new();
    let mut probe = params.clone();
    for (name, grad) in analytic.iter() {
        let mut max_err: f64 = 0.0;
        for i in 0..grad.len() {
            let original = probe.get(name).expect("same names").data()[i];
            probe.get_mut(name).expect("same names").data_mut()[i] = original + step;
            let plus = eval(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = original - step;
            let minus = eval(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[i];
            let denom = libm::fabs(a).max(libm::fabs(numeric)).max(GRAD_CHECK_FLOOR);
            max_err = max_err.max(libm::fabs(a - numeric) / denom);
        }
        worst.insert(name.to_string(), max_err);
    }
    Ok(worst)
}
