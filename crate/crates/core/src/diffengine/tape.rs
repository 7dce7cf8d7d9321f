//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its forward value and the ids of its
//! parents. [`Var::backward`] walks the tape once in reverse, so each node
//! is visited exactly once. Nodes that do not depend on a leaf created with
//! [`Tape::param`] never receive a gradient buffer; constants such as the
//! input point cloud cost nothing in the backward pass.

use std::cell::{Ref, RefCell};

use super::tensor::{order_free_sum, Tensor};
use crate::error::{Error, Result};

/// Largest magnitude `tanh` may return. Keeps outputs strictly inside
/// (-1, 1) even when `f64::tanh` rounds to one.
const TANH_LIMIT: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Affine { x: usize, w: usize, b: Option<usize> },
    Tanh(usize),
    Exp(usize),
    ExpM1(usize),
    Log(usize),
    Square(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Sum(usize),
    Mean(usize),
    SumRows { a: usize, group: usize },
    MeanRows { a: usize, group: usize },
    SumCols(usize),
    SubGroups { a: usize, m: usize, group: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { a: usize, start: usize },
    SliceRows { a: usize, start: usize },
    Clamp { a: usize, lo: f64, hi: f64 },
    Reshape(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Affine { .. } => "affine",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::ExpM1(_) => "exp_m1",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(_) => "offset",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumRows { .. } => "sum_rows",
            Op::MeanRows { .. } => "mean_rows",
            Op::SumCols(_) => "sum_cols",
            Op::SubGroups { .. } => "sub_groups",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::Clamp { .. } => "clamp",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "{} produced a non-finite value",
                op.name()
            )));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents(&op).iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }
}

fn parents(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::Affine { x, w, b } => {
            let mut p = vec![*x, *w];
            p.extend(b);
            p
        }
        Op::Tanh(a)
        | Op::Exp(a)
        | Op::ExpM1(a)
        | Op::Log(a)
        | Op::Square(a)
        | Op::Scale(a, _)
        | Op::Offset(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SumCols(a)
        | Op::Reshape(a) => vec![*a],
        Op::SumRows { a, .. }
        | Op::MeanRows { a, .. }
        | Op::SliceCols { a, .. }
        | Op::SliceRows { a, .. }
        | Op::Clamp { a, .. } => vec![*a],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
        Op::SubGroups { a, m, .. } => vec![*a, *m],
        Op::ConcatCols(v) | Op::ConcatRows(v) => v.clone(),
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let values = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), values).expect("shapes checked")
}

/// `y = x · wᵀ + b` for `x: r × in`, `w: out × in`, `b: 1 × out`.
fn affine_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (r, inp, out) = (x.rows(), x.cols(), w.rows());
    let wt = w.transpose();
    let wt = wt.values();
    let mut y = Tensor::zeros(r, out);
    let yv = y.values_mut();
    for i in 0..r {
        let yi = &mut yv[i * out..(i + 1) * out];
        if let Some(b) = b {
            yi.copy_from_slice(b.values());
        }
        for (k, &a) in x.row_slice(i).iter().enumerate().take(inp) {
            for (yo, &wko) in yi.iter_mut().zip(&wt[k * out..(k + 1) * out]) {
                *yo += a * wko;
            }
        }
    }
    y
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.value(self.id).shape()
    }

    /// Value of a `1 × 1` node.
    pub fn item(&self) -> f64 {
        self.tape.value(self.id).item()
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let value = self.tape.value(self.id).map(f);
        self.tape.push(value, op)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            same_shape(op.name(), &a, &b)?;
            zip_map(&a, &b, f)
        };
        self.tape.push(value, op)
    }

    /// Dense map `self · wᵀ + b`, applied row by row.
    pub fn affine(self, w: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value(self.id);
            let wv = self.tape.value(w.id);
            if x.cols() != wv.cols() {
                return Err(Error::Shape(format!(
                    "affine: input {:?} vs weights {:?}",
                    x.shape(),
                    wv.shape()
                )));
            }
            let bv = b.map(|b| self.tape.value(b.id));
            if let Some(bv) = &bv {
                if bv.shape() != [1, wv.rows()] {
                    return Err(Error::Shape(format!(
                        "affine: bias {:?} for {} outputs",
                        bv.shape(),
                        wv.rows()
                    )));
                }
            }
            affine_forward(&x, &wv, bv.as_deref())
        };
        self.tape.push(
            value,
            Op::Affine {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
        )
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(Op::Tanh(self.id), |v| v.tanh().clamp(-TANH_LIMIT, TANH_LIMIT))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    /// `e^x - 1` without cancellation near zero.
    pub fn exp_m1(self) -> Result<Var<'t>> {
        self.unary(Op::ExpM1(self.id), f64::exp_m1)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), |v| v * c)
    }

    pub fn offset(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Offset(self.id), |v| v + c)
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let s = self.tape.value(self.id).values().iter().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = {
            let t = self.tape.value(self.id);
            t.values().iter().sum::<f64>() / t.len() as f64
        };
        self.tape.push(Tensor::scalar(v), Op::Mean(self.id))
    }

    fn row_groups(self, group: usize, mean: bool) -> Result<Tensor> {
        let t = self.tape.value(self.id);
        let (r, c) = (t.rows(), t.cols());
        if group == 0 || r % group != 0 {
            return Err(Error::Shape(format!("{r} rows in groups of {group}")));
        }
        let groups = r / group;
        let mut out = Tensor::zeros(groups, c);
        let mut buf = vec![0.0; group];
        for g in 0..groups {
            for j in 0..c {
                for (i, slot) in buf.iter_mut().enumerate() {
                    *slot = t.get(g * group + i, j);
                }
                let s = order_free_sum(&mut buf);
                out.set(g, j, if mean { s / group as f64 } else { s });
            }
        }
        Ok(out)
    }

    /// Column sums over consecutive blocks of `group` rows:
    /// `(G·group) × c → G × c`. The result does not depend on row order
    /// within a block, bit for bit.
    pub fn sum_rows(self, group: usize) -> Result<Var<'t>> {
        let v = self.row_groups(group, false)?;
        self.tape.push(v, Op::SumRows { a: self.id, group })
    }

    /// Like [`Var::sum_rows`] but divided by `group`.
    pub fn mean_rows(self, group: usize) -> Result<Var<'t>> {
        let v = self.row_groups(group, true)?;
        self.tape.push(v, Op::MeanRows { a: self.id, group })
    }

    /// Row sums: `r × c → r × 1`.
    pub fn sum_cols(self) -> Result<Var<'t>> {
        let v = {
            let t = self.tape.value(self.id);
            let sums = (0..t.rows()).map(|i| t.row_slice(i).iter().sum()).collect();
            Tensor::new(t.rows(), 1, sums)?
        };
        self.tape.push(v, Op::SumCols(self.id))
    }

    /// Subtracts row `g` of `m` from every row of block `g` of `self`.
    pub fn sub_groups(self, m: Var<'t>, group: usize) -> Result<Var<'t>> {
        let v = {
            let a = self.tape.value(self.id);
            let mv = self.tape.value(m.id);
            if group == 0 || a.rows() != mv.rows() * group || a.cols() != mv.cols() {
                return Err(Error::Shape(format!(
                    "sub_groups: {:?} minus {:?} in groups of {group}",
                    a.shape(),
                    mv.shape()
                )));
            }
            let mut out = a.clone();
            let c = a.cols();
            for (i, row) in out.values_mut().chunks_mut(c).enumerate() {
                for (x, &mu) in row.iter_mut().zip(mv.row_slice(i / group)) {
                    *x -= mu;
                }
            }
            out
        };
        self.tape.push(
            v,
            Op::SubGroups {
                a: self.id,
                m: m.id,
                group,
            },
        )
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        if lo > hi {
            return Err(Error::Domain(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary(Op::Clamp { a: self.id, lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = {
            let t = self.tape.value(self.id);
            if start > end || end > t.cols() {
                return Err(Error::Shape(format!(
                    "slice_cols {start}..{end} of {:?}",
                    t.shape()
                )));
            }
            let values = (0..t.rows())
                .flat_map(|i| t.row_slice(i)[start..end].to_vec())
                .collect();
            Tensor::new(t.rows(), end - start, values)?
        };
        self.tape.push(v, Op::SliceCols { a: self.id, start })
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = {
            let t = self.tape.value(self.id);
            if start > end || end > t.rows() {
                return Err(Error::Shape(format!(
                    "slice_rows {start}..{end} of {:?}",
                    t.shape()
                )));
            }
            let c = t.cols();
            Tensor::new(end - start, c, t.values()[start * c..end * c].to_vec())?
        };
        self.tape.push(v, Op::SliceRows { a: self.id, start })
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let v = self.tape.value(self.id).clone().reshaped(rows, cols)?;
        self.tape.push(v, Op::Reshape(self.id))
    }

    pub fn backward(&self) -> Result<Gradients> {
        backward(self.tape, *self)
    }
}

pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of nothing".into()))?
        .tape;
    let v = {
        let vals: Vec<_> = parts.iter().map(|p| tape.value(p.id)).collect();
        let rows = vals[0].rows();
        if vals.iter().any(|v| v.rows() != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = vals.iter().map(|v| v.cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for v in &vals {
                out.extend_from_slice(v.row_slice(i));
            }
        }
        Tensor::new(rows, cols, out)?
    };
    tape.push(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
}

pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of nothing".into()))?
        .tape;
    let v = {
        let vals: Vec<_> = parts.iter().map(|p| tape.value(p.id)).collect();
        let cols = vals[0].cols();
        if vals.iter().any(|v| v.cols() != cols) {
            return Err(Error::Shape("concat_rows: column counts differ".into()));
        }
        let rows: usize = vals.iter().map(|v| v.rows()).sum();
        let out = vals.iter().flat_map(|v| v.values().to_vec()).collect();
        Tensor::new(rows, cols, out)?
    };
    tape.push(v, Op::ConcatRows(parts.iter().map(|p| p.id).collect()))
}

/// Gradients of a scalar with respect to every node of its tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[var.id];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        match self.grads[var.id].take() {
            Some(g) => g,
            None => {
                let [r, c] = self.shapes[var.id];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn backward(tape: &Tape, loss: Var<'_>) -> Result<Gradients> {
    let nodes = tape.nodes.borrow();
    if nodes[loss.id].value.shape() != [1, 1] {
        return Err(Error::Domain(format!(
            "backward from non-scalar of shape {:?}",
            nodes[loss.id].value.shape()
        )));
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
    grads[loss.id] = Some(Tensor::scalar(1.0));

    for id in (0..=loss.id).rev() {
        let node = &nodes[id];
        if !node.requires_grad {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        let needs = |p: usize| nodes[p].requires_grad;
        let val = |p: usize| &nodes[p].value;

        match &node.op {
            Op::Leaf => {
                grads[id] = Some(g);
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (r, inp, out) = (xv.rows(), xv.cols(), wv.rows());
                let gv = g.values();
                if needs(*x) {
                    let mut dx = Tensor::zeros(r, inp);
                    let dxv = dx.values_mut();
                    for i in 0..r {
                        let row = &mut dxv[i * inp..(i + 1) * inp];
                        for o in 0..out {
                            let a = gv[i * out + o];
                            if a != 0.0 {
                                for (d, &wk) in row.iter_mut().zip(wv.row_slice(o)) {
                                    *d += a * wk;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[*x], dx);
                }
                if needs(*w) {
                    let mut dw = Tensor::zeros(out, inp);
                    let dwv = dw.values_mut();
                    for i in 0..r {
                        let xi = xv.row_slice(i);
                        for o in 0..out {
                            let a = gv[i * out + o];
                            if a != 0.0 {
                                for (d, &xk) in dwv[o * inp..(o + 1) * inp].iter_mut().zip(xi) {
                                    *d += a * xk;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[*w], dw);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let mut db = vec![0.0; out];
                        for row in gv.chunks(out) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads[*b], Tensor::row(db));
                    }
                }
            }
            Op::Tanh(a) => {
                let d = zip_map(&g, &node.value, |g, y| g * (1.0 - y * y));
                accumulate(&mut grads[*a], d);
            }
            Op::Exp(a) => {
                let d = zip_map(&g, &node.value, |g, y| g * y);
                accumulate(&mut grads[*a], d);
            }
            Op::ExpM1(a) => {
                let d = zip_map(&g, &node.value, |g, y| g * (y + 1.0));
                accumulate(&mut grads[*a], d);
            }
            Op::Log(a) => {
                let d = zip_map(&g, val(*a), |g, x| g / x);
                accumulate(&mut grads[*a], d);
            }
            Op::Square(a) => {
                let d = zip_map(&g, val(*a), |g, x| 2.0 * g * x);
                accumulate(&mut grads[*a], d);
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[*a], g.clone());
                }
                if needs(*b) {
                    accumulate(&mut grads[*b], g);
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[*a], g.clone());
                }
                if needs(*b) {
                    accumulate(&mut grads[*b], g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[*a], zip_map(&g, val(*b), |g, y| g * y));
                }
                if needs(*b) {
                    accumulate(&mut grads[*b], zip_map(&g, val(*a), |g, x| g * x));
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                if needs(*a) {
                    accumulate(&mut grads[*a], zip_map(&g, bv, |g, y| g / y));
                }
                if needs(*b) {
                    // d(x/y)/dy = -(x/y)/y
                    let q = zip_map(&node.value, bv, |q, y| q / y);
                    accumulate(&mut grads[*b], zip_map(&g, &q, |g, q| -g * q));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(&mut grads[*a], g.map(|v| v * c));
            }
            Op::Offset(a) => accumulate(&mut grads[*a], g),
            Op::Sum(a) => {
                let [r, c] = val(*a).shape();
                accumulate(&mut grads[*a], Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let [r, c] = val(*a).shape();
                let n = (r * c) as f64;
                accumulate(&mut grads[*a], Tensor::filled(r, c, g.item() / n));
            }
            Op::SumRows { a, group } | Op::MeanRows { a, group } => {
                let scale = match node.op {
                    Op::MeanRows { .. } => 1.0 / *group as f64,
                    _ => 1.0,
                };
                let [r, c] = val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                for (i, row) in d.values_mut().chunks_mut(c).enumerate() {
                    for (x, &gv) in row.iter_mut().zip(g.row_slice(i / group)) {
                        *x = gv * scale;
                    }
                }
                accumulate(&mut grads[*a], d);
            }
            Op::SumCols(a) => {
                let [r, c] = val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                for (i, row) in d.values_mut().chunks_mut(c).enumerate() {
                    row.fill(g.values()[i]);
                }
                accumulate(&mut grads[*a], d);
            }
            Op::SubGroups { a, m, group } => {
                if needs(*m) {
                    let [gr, c] = val(*m).shape();
                    let mut dm = Tensor::zeros(gr, c);
                    let dmv = dm.values_mut();
                    for (i, row) in g.values().chunks(c).enumerate() {
                        let blk = i / group;
                        for (d, &v) in dmv[blk * c..(blk + 1) * c].iter_mut().zip(row) {
                            *d -= v;
                        }
                    }
                    accumulate(&mut grads[*m], dm);
                }
                if needs(*a) {
                    accumulate(&mut grads[*a], g);
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if needs(p) {
                        let rows = g.rows();
                        let values = (0..rows)
                            .flat_map(|i| g.row_slice(i)[start..start + pc].to_vec())
                            .collect();
                        accumulate(&mut grads[p], Tensor::new(rows, pc, values)?);
                    }
                    start += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut start = 0;
                for &p in parts {
                    let pr = val(p).rows();
                    if needs(p) {
                        let values = g.values()[start * c..(start + pr) * c].to_vec();
                        accumulate(&mut grads[p], Tensor::new(pr, c, values)?);
                    }
                    start += pr;
                }
            }
            Op::SliceCols { a, start } => {
                let [r, c] = val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                let w = g.cols();
                for i in 0..r {
                    d.values_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row_slice(i));
                }
                accumulate(&mut grads[*a], d);
            }
            Op::SliceRows { a, start } => {
                let [r, c] = val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                d.values_mut()[start * c..start * c + g.len()].copy_from_slice(g.values());
                accumulate(&mut grads[*a], d);
            }
            Op::Clamp { a, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let d = zip_map(&g, val(*a), |g, x| if x < lo || x > hi { 0.0 } else { g });
                accumulate(&mut grads[*a], d);
            }
            Op::Reshape(a) => {
                let [r, c] = val(*a).shape();
                accumulate(&mut grads[*a], g.reshaped(r, c)?);
            }
        }
    }

    Ok(Gradients {
        shapes: nodes.iter().map(|n| n.value.shape()).collect(),
        grads,
    })
}
