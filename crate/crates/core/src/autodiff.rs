//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in creation order, so recording order is a
//! topological order and [`Tape::backward`] is a single reverse sweep. Values are
//! [`Var`] handles borrowed from the tape; every operation checks shapes up front
//! and returns [`Error::Shape`] instead of recording a malformed node.

use std::cell::{Ref, RefCell};
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::marginals;
use crate::matrix::{gemm, Cholesky, DenseMatrix};
use crate::normal;

/// Inputs above this threshold use the asymptote `softplus(x) = x`.
const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    ScalarMul { scalar: usize, mat: usize },
    Transpose(usize),
    GatherRows(usize, Vec<usize>),
    GatherCols(usize, Vec<usize>),
    ConcatCols(usize, usize),
    Sum(usize),
    Mean(usize),
    Relu(usize),
    Tanh(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    Recip(usize),
    Diag(usize),
    Clamp(usize, f64, f64),
    LogDetSpd { arg: usize, inverse: DenseMatrix },
    InverseSpd(usize),
    InverseSpdBlock { arg: usize, columns: DenseMatrix },
    NormalQuantile(usize),
    NormalCdf(usize),
    WeightedLaplacian {
        weights: usize,
        edges: Arc<Vec<(usize, usize)>>,
    },
    PoissonMidpoint { rate: usize, counts: Vec<u64> },
}

struct Node {
    value: DenseMatrix,
    op: Op,
    needs_grad: bool,
}

/// Recording of a computation; single-threaded, one per forward/backward pass.
#[derive(Default)]
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

    /// Differentiable leaf.
    pub fn param(&self, value: DenseMatrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, value: DenseMatrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(DenseMatrix::scalar(value))
    }

    fn push(&self, value: DenseMatrix, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Reverse sweep from a 1x1 output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(self, output.tape), "output belongs to another tape");
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.id].value.shape();
        if out_shape != (1, 1) {
            return Err(Error::shape("backward", out_shape, (1, 1)));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; output.id + 1];
        grads[output.id] = Some(DenseMatrix::scalar(1.0));
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            propagate(&nodes, id, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of one backward sweep, indexed by leaf.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zeros when the output does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> DenseMatrix {
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = var.shape();
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<DenseMatrix>], id: usize, g: DenseMatrix) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

fn sym(m: &DenseMatrix) -> DenseMatrix {
    m.symmetrize()
}

fn propagate(nodes: &[Node], id: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
    let val = |i: usize| &nodes[i].value;
    let need = |i: usize| nodes[i].needs_grad;
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            if need(a) {
                accumulate(nodes, grads, a, gemm(g, false, val(b), true));
            }
            if need(b) {
                accumulate(nodes, grads, b, gemm(val(a), true, g, false));
            }
        }
        &Op::Add(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, g.clone());
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, g.scale(-1.0));
        }
        &Op::Mul(a, b) => {
            if need(a) {
                accumulate(nodes, grads, a, g.zip_map(val(b), |x, y| x * y));
            }
            if need(b) {
                accumulate(nodes, grads, b, g.zip_map(val(a), |x, y| x * y));
            }
        }
        &Op::Scale(a, c) => accumulate(nodes, grads, a, g.scale(c)),
        &Op::AddConst(a) => accumulate(nodes, grads, a, g.clone()),
        &Op::ScalarMul { scalar, mat } => {
            let s = val(scalar).item();
            if need(mat) {
                accumulate(nodes, grads, mat, g.scale(s));
            }
            if need(scalar) {
                let ds: f64 = g.data().iter().zip(val(mat).data()).map(|(x, y)| x * y).sum();
                accumulate(nodes, grads, scalar, DenseMatrix::scalar(ds));
            }
        }
        &Op::Transpose(a) => accumulate(nodes, grads, a, g.transpose()),
        Op::GatherRows(a, idx) => {
            let (r, c) = val(*a).shape();
            let mut d = DenseMatrix::zeros(r, c);
            for (k, &i) in idx.iter().enumerate() {
                for (dst, src) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                    *dst += src;
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::GatherCols(a, idx) => {
            let (r, c) = val(*a).shape();
            let mut d = DenseMatrix::zeros(r, c);
            for i in 0..r {
                let grow = g.row(i);
                let drow = d.row_mut(i);
                for (k, &j) in idx.iter().enumerate() {
                    drow[j] += grow[k];
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        &Op::ConcatCols(a, b) => {
            let ca = val(a).cols();
            let cb = val(b).cols();
            let rows = g.rows();
            if need(a) {
                let da = DenseMatrix::from_fn(rows, ca, |i, j| g[(i, j)]);
                accumulate(nodes, grads, a, da);
            }
            if need(b) {
                let db = DenseMatrix::from_fn(rows, cb, |i, j| g[(i, ca + j)]);
                accumulate(nodes, grads, b, db);
            }
        }
        &Op::Sum(a) => {
            let (r, c) = val(a).shape();
            accumulate(nodes, grads, a, DenseMatrix::filled(r, c, g.item()));
        }
        &Op::Mean(a) => {
            let (r, c) = val(a).shape();
            let n = (r * c) as f64;
            accumulate(nodes, grads, a, DenseMatrix::filled(r, c, g.item() / n));
        }
        &Op::Relu(a) => accumulate(
            nodes,
            grads,
            a,
            g.zip_map(val(a), |gi, x| if x > 0.0 { gi } else { 0.0 }),
        ),
        &Op::Tanh(a) => accumulate(nodes, grads, a, g.zip_map(out, |gi, y| gi * (1.0 - y * y))),
        &Op::Softplus(a) => accumulate(
            nodes,
            grads,
            a,
            g.zip_map(val(a), |gi, x| gi / (1.0 + (-x).exp())),
        ),
        &Op::Exp(a) => accumulate(nodes, grads, a, g.zip_map(out, |gi, y| gi * y)),
        &Op::Log(a) => accumulate(nodes, grads, a, g.zip_map(val(a), |gi, x| gi / x)),
        &Op::Square(a) => accumulate(nodes, grads, a, g.zip_map(val(a), |gi, x| 2.0 * gi * x)),
        &Op::Sqrt(a) => accumulate(nodes, grads, a, g.zip_map(out, |gi, y| gi / (2.0 * y))),
        &Op::Recip(a) => accumulate(nodes, grads, a, g.zip_map(out, |gi, y| -gi * y * y)),
        &Op::Diag(a) => {
            let n = val(a).rows();
            let mut d = DenseMatrix::zeros(n, n);
            for i in 0..n {
                d[(i, i)] = g[(i, 0)];
            }
            accumulate(nodes, grads, a, d);
        }
        &Op::Clamp(a, lo, hi) => accumulate(
            nodes,
            grads,
            a,
            g.zip_map(val(a), |gi, x| if x > lo && x < hi { gi } else { 0.0 }),
        ),
        Op::LogDetSpd { arg, inverse } => {
            accumulate(nodes, grads, *arg, inverse.scale(g.item()));
        }
        &Op::InverseSpd(a) => {
            let sg = gemm(out, false, g, false);
            let d = gemm(&sg, false, out, false).scale(-1.0);
            accumulate(nodes, grads, a, sym(&d));
        }
        Op::InverseSpdBlock { arg, columns } => {
            let xg = gemm(columns, false, g, false);
            let d = gemm(&xg, false, columns, true).scale(-1.0);
            accumulate(nodes, grads, *arg, sym(&d));
        }
        &Op::NormalQuantile(a) => {
            accumulate(nodes, grads, a, g.zip_map(out, |gi, z| gi / normal::pdf(z)))
        }
        &Op::NormalCdf(a) => accumulate(
            nodes,
            grads,
            a,
            g.zip_map(val(a), |gi, x| gi * normal::pdf(x)),
        ),
        Op::WeightedLaplacian { weights, edges } => {
            let d: Vec<f64> = edges
                .iter()
                .map(|&(i, j)| g[(i, i)] + g[(j, j)] - g[(i, j)] - g[(j, i)])
                .collect();
            accumulate(nodes, grads, *weights, DenseMatrix::column(&d));
        }
        Op::PoissonMidpoint { rate, counts } => {
            let lam = val(*rate);
            let d: Vec<f64> = counts
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    let l = lam[(i, 0)];
                    let below = if k == 0 {
                        0.0
                    } else {
                        marginals::poisson_pmf(l, k - 1)
                    };
                    -0.5 * (below + marginals::poisson_pmf(l, k)) * g[(i, 0)]
                })
                .collect();
            accumulate(nodes, grads, *rate, DenseMatrix::column(&d));
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, DenseMatrix> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    /// Value of a 1x1 node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn unary(&self, op: Op, value: DenseMatrix) -> Var<'t> {
        let needs = self.tape.needs(self.id);
        self.tape.push(value, op, needs)
    }

    fn binary(&self, other: &Var<'t>, op: Op, value: DenseMatrix) -> Var<'t> {
        let needs = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(value, op, needs)
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.unary(op, v)
    }

    pub fn matmul(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs);
        let v = self.value().matmul(&rhs.value())?;
        Ok(self.binary(rhs, Op::MatMul(self.id, rhs.id), v))
    }

    pub fn add(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs);
        let v = self.value().add(&rhs.value())?;
        Ok(self.binary(rhs, Op::Add(self.id, rhs.id), v))
    }

    pub fn sub(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs);
        let v = self.value().sub(&rhs.value())?;
        Ok(self.binary(rhs, Op::Sub(self.id, rhs.id), v))
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        if a.shape() != b.shape() {
            return Err(Error::shape("mul", a.shape(), b.shape()));
        }
        let v = a.zip_map(&b, |x, y| x * y);
        drop((a, b));
        Ok(self.binary(rhs, Op::Mul(self.id, rhs.id), v))
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: f64) -> Var<'t> {
        self.map(Op::Scale(self.id, c), |x| x * c)
    }

    /// Adds a constant to every entry.
    pub fn add_const(&self, c: f64) -> Var<'t> {
        self.map(Op::AddConst(self.id), |x| x + c)
    }

    /// `s * self` for a 1x1 node `s`.
    pub fn scale_by(&self, s: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(s);
        if s.shape() != (1, 1) {
            return Err(Error::shape("scale_by", s.shape(), (1, 1)));
        }
        let c = s.item();
        let v = self.value().scale(c);
        Ok(self.binary(
            s,
            Op::ScalarMul {
                scalar: s.id,
                mat: self.id,
            },
            v,
        ))
    }

    pub fn t(&self) -> Var<'t> {
        let v = self.value().transpose();
        self.unary(Op::Transpose(self.id), v)
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        let v = {
            let m = self.value();
            if let Some(&bad) = idx.iter().find(|&&i| i >= m.rows()) {
                return Err(Error::shape("gather_rows", m.shape(), (bad, 0)));
            }
            m.select_rows(idx)
        };
        Ok(self.unary(Op::GatherRows(self.id, idx.to_vec()), v))
    }

    pub fn gather_cols(&self, idx: &[usize]) -> Result<Var<'t>> {
        let v = {
            let m = self.value();
            if let Some(&bad) = idx.iter().find(|&&j| j >= m.cols()) {
                return Err(Error::shape("gather_cols", m.shape(), (0, bad)));
            }
            let rows: Vec<usize> = (0..m.rows()).collect();
            m.select(&rows, idx)
        };
        Ok(self.unary(Op::GatherCols(self.id, idx.to_vec()), v))
    }

    pub fn slice_rows(&self, range: Range<usize>) -> Result<Var<'t>> {
        self.gather_rows(&range.collect::<Vec<_>>())
    }

    pub fn slice_cols(&self, range: Range<usize>) -> Result<Var<'t>> {
        self.gather_cols(&range.collect::<Vec<_>>())
    }

    /// `[self | rhs]`
    pub fn concat_cols(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs);
        let v = {
            let (a, b) = (self.value(), rhs.value());
            if a.rows() != b.rows() {
                return Err(Error::shape("concat_cols", a.shape(), b.shape()));
            }
            let (ca, cb) = (a.cols(), b.cols());
            DenseMatrix::from_fn(a.rows(), ca + cb, |i, j| {
                if j < ca {
                    a[(i, j)]
                } else {
                    b[(i, j - ca)]
                }
            })
        };
        Ok(self.binary(rhs, Op::ConcatCols(self.id, rhs.id), v))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = DenseMatrix::scalar(self.value().sum());
        self.unary(Op::Sum(self.id), v)
    }

    pub fn mean(&self) -> Var<'t> {
        let v = {
            let m = self.value();
            DenseMatrix::scalar(m.sum() / (m.rows() * m.cols()) as f64)
        };
        self.unary(Op::Mean(self.id), v)
    }

    pub fn relu(&self) -> Var<'t> {
        self.map(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.map(Op::Tanh(self.id), f64::tanh)
    }

    /// `log(1 + eˣ)`, switching to the identity for large `x`.
    pub fn softplus(&self) -> Var<'t> {
        self.map(Op::Softplus(self.id), softplus)
    }

    pub fn exp(&self) -> Var<'t> {
        self.map(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(&self) -> Var<'t> {
        self.map(Op::Log(self.id), f64::ln)
    }

    pub fn square(&self) -> Var<'t> {
        self.map(Op::Square(self.id), |x| x * x)
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.map(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn recip(&self) -> Var<'t> {
        self.map(Op::Recip(self.id), f64::recip)
    }

    /// Diagonal of a square matrix as a column.
    pub fn diag(&self) -> Result<Var<'t>> {
        let v = {
            let m = self.value();
            if !m.is_square() {
                return Err(Error::shape("diag", m.shape(), m.shape()));
            }
            DenseMatrix::column(&m.diag())
        };
        Ok(self.unary(Op::Diag(self.id), v))
    }

    /// Entrywise clamp; the gradient is zero wherever the bound is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.map(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    /// `log det A` of a symmetric positive definite matrix (the symmetric part of the input).
    pub fn logdet_spd(&self) -> Result<Var<'t>> {
        let (value, inverse) = {
            let m = self.value();
            let ch = Cholesky::new(&m.symmetrize())?;
            (ch.logdet(), ch.inverse())
        };
        Ok(self.unary(
            Op::LogDetSpd {
                arg: self.id,
                inverse,
            },
            DenseMatrix::scalar(value),
        ))
    }

    /// `A⁻¹` of a symmetric positive definite matrix (the symmetric part of the input).
    pub fn inverse_spd(&self) -> Result<Var<'t>> {
        let v = {
            let m = self.value();
            Cholesky::new(&m.symmetrize())?.inverse()
        };
        Ok(self.unary(Op::InverseSpd(self.id), v))
    }

    /// The block `(A⁻¹)[idx, idx]` of the inverse of a symmetric positive definite
    /// matrix, without forming the whole inverse.
    pub fn inverse_spd_block(&self, idx: &[usize]) -> Result<Var<'t>> {
        let (columns, block) = {
            let m = self.value();
            if !m.is_square() {
                return Err(Error::shape("inverse_spd_block", m.shape(), m.shape()));
            }
            if let Some(&i) = idx.iter().find(|&&i| i >= m.rows()) {
                return Err(Error::Config(format!("block index {i} out of range for {}", m.rows())));
            }
            Cholesky::new(&m.symmetrize())?.inverse_columns(idx)
        };
        Ok(self.unary(Op::InverseSpdBlock { arg: self.id, columns }, block))
    }

    /// Elementwise `Φ⁻¹`; every entry must lie strictly inside `(0, 1)`.
    pub fn normal_quantile(&self) -> Result<Var<'t>> {
        let v = {
            let m = self.value();
            let data = m
                .data()
                .iter()
                .map(|&u| normal::quantile(u))
                .collect::<Result<Vec<_>>>()?;
            DenseMatrix::from_vec(m.rows(), m.cols(), data)?
        };
        Ok(self.unary(Op::NormalQuantile(self.id), v))
    }

    /// Elementwise `Φ`.
    pub fn normal_cdf(&self) -> Var<'t> {
        self.map(Op::NormalCdf(self.id), normal::cdf)
    }

    /// `diag(Ŵ𝟙) - Ŵ` where `Ŵ` is the symmetric weighted adjacency placing
    /// `self[e]` on edge `edges[e]`.
    pub fn weighted_laplacian(&self, n: usize, edges: Arc<Vec<(usize, usize)>>) -> Result<Var<'t>> {
        let v = {
            let w = self.value();
            if w.shape() != (edges.len(), 1) {
                return Err(Error::shape("weighted_laplacian", w.shape(), (edges.len(), 1)));
            }
            let mut l = DenseMatrix::zeros(n, n);
            for (e, &(i, j)) in edges.iter().enumerate() {
                let x = w[(e, 0)];
                l[(i, i)] += x;
                l[(j, j)] += x;
                l[(i, j)] -= x;
                l[(j, i)] -= x;
            }
            l
        };
        Ok(self.unary(
            Op::WeightedLaplacian {
                weights: self.id,
                edges,
            },
            v,
        ))
    }

    /// Midpoint probability-integral transform `(F(y-1; λ) + F(y; λ)) / 2` of Poisson
    /// counts, with `self` the column of rates.
    pub fn poisson_midpoint(&self, counts: &[u64]) -> Result<Var<'t>> {
        let v = {
            let lam = self.value();
            if lam.shape() != (counts.len(), 1) {
                return Err(Error::shape("poisson_midpoint", lam.shape(), (counts.len(), 1)));
            }
            let data: Vec<f64> = counts
                .iter()
                .enumerate()
                .map(|(i, &k)| marginals::poisson_midpoint(lam[(i, 0)], k))
                .collect();
            DenseMatrix::column(&data)
        };
        Ok(self.unary(
            Op::PoissonMidpoint {
                rate: self.id,
                counts: counts.to_vec(),
            },
            v,
        ))
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        x
    } else {
        x.exp().ln_1p()
    }
}
