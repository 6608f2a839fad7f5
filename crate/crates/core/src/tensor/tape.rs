//! Reverse-mode differentiation over dense matrices.
//!
//! Every primitive application is appended to a [`Tape`]; [`Var::backward`]
//! walks the tape in exact reverse recording order and accumulates (`+=`)
//! the gradient of a scalar output into each input that requires one.

use super::Matrix;
use crate::error::{Error, Result};
use std::cell::{Ref, RefCell};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Clamp(usize, f64, f64),
    RowSoftmax(usize),
    Sum(usize),
    Mean(usize),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    RowSelect(usize, Vec<usize>),
    Element(usize, usize, usize),
    Cosine { a: usize, b: usize, eps: f64 },
    SqDist(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recording of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
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

    fn push(&self, value: Matrix, op: Op, requires_grad: bool, name: &'static str) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::Numerics(name));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Matrix) -> Result<Var<'_>> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Result<Var<'_>> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn concat_rows(&self, parts: &[Var<'_>]) -> Result<Var<'_>> {
        let first = parts.first().ok_or(Error::shape("concat_rows", (0, 0), (0, 0)))?;
        let cols = first.cols();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let mut data = Vec::new();
            let mut rows = 0;
            for &i in &ids {
                let v = &nodes[i].value;
                if v.cols() != cols {
                    return Err(Error::shape("concat_rows", (rows, cols), v.shape()));
                }
                rows += v.rows();
                data.extend_from_slice(v.as_slice());
            }
            Matrix::from_vec(rows, cols, data)?
        };
        let rg = self.needs(&ids);
        self.push(value, Op::ConcatRows(ids), rg, "concat_rows")
    }

    pub fn concat_cols(&self, parts: &[Var<'_>]) -> Result<Var<'_>> {
        let first = parts.first().ok_or(Error::shape("concat_cols", (0, 0), (0, 0)))?;
        let rows = first.rows();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let mut cols = 0;
            for &i in &ids {
                let v = &nodes[i].value;
                if v.rows() != rows {
                    return Err(Error::shape("concat_cols", (rows, cols), v.shape()));
                }
                cols += v.cols();
            }
            let mut out = Matrix::zeros(rows, cols);
            for r in 0..rows {
                let mut offset = 0;
                for &i in &ids {
                    let v = &nodes[i].value;
                    out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
                    offset += v.cols();
                }
            }
            out
        };
        let rg = self.needs(&ids);
        self.push(value, Op::ConcatCols(ids), rg, "concat_cols")
    }

    fn value_of(&self, id: usize) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
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

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Matrix> {
        self.tape.value_of(self.id)
    }

    pub fn to_matrix(&self) -> Matrix {
        self.value().clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    /// Value of a 1×1 variable.
    pub fn scalar(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.shape(), (1, 1));
        v.as_slice()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(&self, op: Op, name: &'static str, f: impl FnOnce(&Matrix) -> Result<Matrix>) -> Result<Var<'t>> {
        let value = f(&self.value())?;
        let rg = self.requires_grad();
        self.tape.push(value, op, rg, name)
    }

    fn binary(
        &self,
        other: Var<'t>,
        op: Op,
        name: &'static str,
        f: impl FnOnce(&Matrix, &Matrix) -> Result<Matrix>,
    ) -> Result<Var<'t>> {
        let value = f(&self.value(), &other.value())?;
        let rg = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, op, rg, name)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), "matmul", |a, b| a.matmul(b))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), "add", |a, b| {
            check_same("add", a, b)?;
            Ok(a.zip_map(b, |x, y| x + y))
        })
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), "sub", |a, b| {
            check_same("sub", a, b)?;
            Ok(a.zip_map(b, |x, y| x - y))
        })
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), "mul", |a, b| {
            check_same("mul", a, b)?;
            Ok(a.zip_map(b, |x, y| x * y))
        })
    }

    /// Elementwise quotient.
    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Div(self.id, other.id), "div", |a, b| {
            check_same("div", a, b)?;
            Ok(a.zip_map(b, |x, y| x / y))
        })
    }

    /// Adds a 1×c row vector to every row.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.binary(row, Op::AddRow(self.id, row.id), "add_row", |a, r| {
            if r.rows() != 1 || r.cols() != a.cols() {
                return Err(Error::shape("add_row", a.shape(), r.shape()));
            }
            let mut out = a.clone();
            for i in 0..out.rows() {
                for (o, &b) in out.row_mut(i).iter_mut().zip(r.row(0)) {
                    *o += b;
                }
            }
            Ok(out)
        })
    }

    /// Scales row `i` by entry `i` of an n×1 column vector.
    pub fn mul_col(&self, col: Var<'t>) -> Result<Var<'t>> {
        self.binary(col, Op::MulCol(self.id, col.id), "mul_col", |a, c| {
            if c.cols() != 1 || c.rows() != a.rows() {
                return Err(Error::shape("mul_col", a.shape(), c.shape()));
            }
            let mut out = a.clone();
            for i in 0..out.rows() {
                let s = c.as_slice()[i];
                out.row_mut(i).iter_mut().for_each(|o| *o *= s);
            }
            Ok(out)
        })
    }

    pub fn scale(&self, s: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, s), "scale", |a| Ok(a.map(|x| x * s)))
    }

    pub fn add_scalar(&self, s: f64) -> Result<Var<'t>> {
        self.unary(Op::AddScalar(self.id), "add_scalar", |a| Ok(a.map(|x| x + s)))
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), "relu", |a| Ok(a.map(|x| x.max(0.0))))
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), "sigmoid", |a| Ok(a.map(sigmoid)))
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.id), "exp", |a| Ok(a.map(f64::exp)))
    }

    /// Natural log; non-positive inputs are a numerics error.
    pub fn log(&self) -> Result<Var<'t>> {
        self.unary(Op::Log(self.id), "log", |a| {
            if a.as_slice().iter().any(|&x| !(x > 0.0)) {
                return Err(Error::Numerics("log"));
            }
            Ok(a.map(f64::ln))
        })
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary(Op::Clamp(self.id, lo, hi), "clamp", |a| Ok(a.map(|x| x.clamp(lo, hi))))
    }

    /// Softmax of each row, with max-subtraction.
    pub fn row_softmax(&self) -> Result<Var<'t>> {
        self.unary(Op::RowSoftmax(self.id), "row_softmax", |a| {
            let mut out = a.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                row.iter_mut().for_each(|x| *x /= total);
            }
            Ok(out)
        })
    }

    /// Sum of all entries, as 1×1.
    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), "sum", |a| Ok(Matrix::scalar(a.sum())))
    }

    /// Mean of all entries, as 1×1.
    pub fn mean(&self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.id), "mean", |a| {
            if a.is_empty() {
                return Err(Error::shape("mean", a.shape(), (1, 1)));
            }
            Ok(Matrix::scalar(a.sum() / a.len() as f64))
        })
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        self.unary(Op::Transpose(self.id), "transpose", |a| Ok(a.transpose()))
    }

    /// Gathers rows by index (repeats allowed).
    pub fn row_select(&self, indices: &[usize]) -> Result<Var<'t>> {
        let idx = indices.to_vec();
        self.unary(Op::RowSelect(self.id, idx), "row_select", |a| {
            if let Some(&bad) = indices.iter().find(|&&i| i >= a.rows()) {
                return Err(Error::shape("row_select", a.shape(), (bad, 0)));
            }
            Ok(a.select_rows(indices))
        })
    }

    /// Rows where `mask` is true, order preserved.
    pub fn row_mask(&self, mask: &[bool]) -> Result<Var<'t>> {
        if mask.len() != self.rows() {
            return Err(Error::shape("row_mask", self.shape(), (mask.len(), 1)));
        }
        let idx: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        self.row_select(&idx)
    }

    /// Single entry as 1×1.
    pub fn element(&self, r: usize, c: usize) -> Result<Var<'t>> {
        self.unary(Op::Element(self.id, r, c), "element", |a| {
            if r >= a.rows() || c >= a.cols() {
                return Err(Error::shape("element", a.shape(), (r, c)));
            }
            Ok(Matrix::scalar(a[(r, c)]))
        })
    }

    /// Copy of the value that blocks gradient flow.
    pub fn detach(&self) -> Result<Var<'t>> {
        let value = self.to_matrix();
        self.tape.push(value, Op::Leaf, false, "detach")
    }

    /// Pairwise cosine similarity of rows: `⟨a_u, b_v⟩ / (‖a_u‖‖b_v‖ + eps)`.
    pub fn cosine(&self, other: Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.binary(other, Op::Cosine { a: self.id, b: other.id, eps }, "cosine", |a, b| {
            if a.cols() != b.cols() {
                return Err(Error::shape("cosine", a.shape(), b.shape()));
            }
            let na = row_norms(a);
            let nb = row_norms(b);
            let mut out = a.matmul_t(b)?;
            for u in 0..a.rows() {
                for v in 0..b.rows() {
                    out[(u, v)] /= na[u] * nb[v] + eps;
                }
            }
            Ok(out)
        })
    }

    /// Pairwise squared Euclidean distances between rows.
    pub fn sq_dist(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::SqDist(self.id, other.id), "sq_dist", |a, b| {
            if a.cols() != b.cols() {
                return Err(Error::shape("sq_dist", a.shape(), b.shape()));
            }
            let mut out = Matrix::zeros(a.rows(), b.rows());
            for u in 0..a.rows() {
                let ra = a.row(u);
                for v in 0..b.rows() {
                    out[(u, v)] = ra.iter().zip(b.row(v)).map(|(x, y)| (x - y) * (x - y)).sum();
                }
            }
            Ok(out)
        })
    }

    /// Reverse pass from this 1×1 output.
    pub fn backward(&self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if root.value.shape() != (1, 1) {
            return Err(Error::shape("backward", root.value.shape(), (1, 1)));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.id + 1];
        grads[self.id] = Some(Matrix::scalar(1.0));
        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn row_norms(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|r| m.row(r).iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Matrix>], id: usize, contribution: Matrix) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.add_assign(&contribution),
        slot => *slot = Some(contribution),
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
    let val = |id: usize| &nodes[id].value;
    let needs = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            if needs(a) {
                accumulate(nodes, grads, a, g.matmul_t(val(b))?);
            }
            if needs(b) {
                accumulate(nodes, grads, b, val(a).t_matmul(g)?);
            }
        }
        &Op::Add(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, g.clone());
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, g.map(|x| -x));
        }
        &Op::Mul(a, b) => {
            if needs(a) {
                accumulate(nodes, grads, a, g.zip_map(val(b), |x, y| x * y));
            }
            if needs(b) {
                accumulate(nodes, grads, b, g.zip_map(val(a), |x, y| x * y));
            }
        }
        &Op::Div(a, b) => {
            if needs(a) {
                accumulate(nodes, grads, a, g.zip_map(val(b), |x, y| x / y));
            }
            if needs(b) {
                // d(a/b)/db = -(a/b)/b
                let q = node.value.zip_map(val(b), |y, bv| -y / bv);
                accumulate(nodes, grads, b, g.zip_map(&q, |x, y| x * y));
            }
        }
        &Op::AddRow(a, r) => {
            accumulate(nodes, grads, a, g.clone());
            if needs(r) {
                let mut acc = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &x) in acc.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                accumulate(nodes, grads, r, acc);
            }
        }
        &Op::MulCol(a, c) => {
            let av = val(a);
            let cv = val(c);
            if needs(a) {
                let mut ga = g.clone();
                for i in 0..ga.rows() {
                    let s = cv.as_slice()[i];
                    ga.row_mut(i).iter_mut().for_each(|x| *x *= s);
                }
                accumulate(nodes, grads, a, ga);
            }
            if needs(c) {
                let gc: Vec<f64> =
                    (0..g.rows()).map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum()).collect();
                accumulate(nodes, grads, c, Matrix::column(&gc));
            }
        }
        &Op::Scale(a, s) => accumulate(nodes, grads, a, g.map(|x| x * s)),
        &Op::AddScalar(a) => accumulate(nodes, grads, a, g.clone()),
        &Op::Relu(a) => accumulate(nodes, grads, a, g.zip_map(val(a), |x, v| if v > 0.0 { x } else { 0.0 })),
        &Op::Sigmoid(a) => accumulate(nodes, grads, a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y))),
        &Op::Exp(a) => accumulate(nodes, grads, a, g.zip_map(&node.value, |x, y| x * y)),
        &Op::Log(a) => accumulate(nodes, grads, a, g.zip_map(val(a), |x, v| x / v)),
        &Op::Clamp(a, lo, hi) => accumulate(
            nodes,
            grads,
            a,
            g.zip_map(val(a), |x, v| if v >= lo && v <= hi { x } else { 0.0 }),
        ),
        &Op::RowSoftmax(a) => {
            let y = &node.value;
            let mut out = Matrix::zeros(y.rows(), y.cols());
            for r in 0..y.rows() {
                let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                for ((o, &gy), &yy) in out.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                    *o = yy * (gy - dot);
                }
            }
            accumulate(nodes, grads, a, out);
        }
        &Op::Sum(a) => {
            let (r, c) = val(a).shape();
            accumulate(nodes, grads, a, Matrix::filled(r, c, g.as_slice()[0]));
        }
        &Op::Mean(a) => {
            let (r, c) = val(a).shape();
            accumulate(nodes, grads, a, Matrix::filled(r, c, g.as_slice()[0] / (r * c) as f64));
        }
        &Op::Transpose(a) => accumulate(nodes, grads, a, g.transpose()),
        Op::ConcatRows(ids) => {
            let mut offset = 0;
            for &i in ids {
                let rows = val(i).rows();
                if needs(i) {
                    let idx: Vec<usize> = (offset..offset + rows).collect();
                    accumulate(nodes, grads, i, g.select_rows(&idx));
                }
                offset += rows;
            }
        }
        Op::ConcatCols(ids) => {
            let mut offset = 0;
            for &i in ids {
                let cols = val(i).cols();
                if needs(i) {
                    let mut part = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        part.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    accumulate(nodes, grads, i, part);
                }
                offset += cols;
            }
        }
        Op::RowSelect(a, idx) => {
            let (r, c) = val(*a).shape();
            let mut out = Matrix::zeros(r, c);
            for (k, &i) in idx.iter().enumerate() {
                for (o, &x) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                    *o += x;
                }
            }
            accumulate(nodes, grads, *a, out);
        }
        &Op::Element(a, r, c) => {
            let (rows, cols) = val(a).shape();
            let mut out = Matrix::zeros(rows, cols);
            out[(r, c)] = g.as_slice()[0];
            accumulate(nodes, grads, a, out);
        }
        &Op::Cosine { a, b, eps } => {
            let av = val(a);
            let bv = val(b);
            let na = row_norms(av);
            let nb = row_norms(bv);
            let dots = av.matmul_t(bv)?;
            let d = av.cols();
            let mut ga = Matrix::zeros(av.rows(), d);
            let mut gb = Matrix::zeros(bv.rows(), d);
            for u in 0..av.rows() {
                for v in 0..bv.rows() {
                    let guv = g[(u, v)];
                    if guv == 0.0 {
                        continue;
                    }
                    let denom = na[u] * nb[v] + eps;
                    let s = dots[(u, v)];
                    let coef = guv / denom;
                    let corr = guv * s / (denom * denom);
                    let ca = if na[u] > 0.0 { corr * nb[v] / na[u] } else { 0.0 };
                    let cb = if nb[v] > 0.0 { corr * na[u] / nb[v] } else { 0.0 };
                    for k in 0..d {
                        let x = av[(u, k)];
                        let y = bv[(v, k)];
                        ga[(u, k)] += coef * y - ca * x;
                        gb[(v, k)] += coef * x - cb * y;
                    }
                }
            }
            accumulate(nodes, grads, a, ga);
            accumulate(nodes, grads, b, gb);
        }
        &Op::SqDist(a, b) => {
            let av = val(a);
            let bv = val(b);
            let d = av.cols();
            let mut ga = Matrix::zeros(av.rows(), d);
            let mut gb = Matrix::zeros(bv.rows(), d);
            for u in 0..av.rows() {
                for v in 0..bv.rows() {
                    let guv = 2.0 * g[(u, v)];
                    if guv == 0.0 {
                        continue;
                    }
                    for k in 0..d {
                        let diff = guv * (av[(u, k)] - bv[(v, k)]);
                        ga[(u, k)] += diff;
                        gb[(v, k)] -= diff;
                    }
                }
            }
            accumulate(nodes, grads, a, ga);
            accumulate(nodes, grads, b, gb);
        }
    }
    Ok(())
}

/// Result of a reverse pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `var`, if any flowed to it.
    pub fn get(&self, var: Var<'_>) -> Option<&Matrix> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zeros when nothing flowed to it.
    pub fn wrt(&self, var: Var<'_>) -> Matrix {
        self.get(var).cloned().unwrap_or_else(|| {
            let (r, c) = var.shape();
            Matrix::zeros(r, c)
        })
    }
}
