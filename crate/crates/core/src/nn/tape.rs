//! Reverse-mode differentiation over the closed set of matrix operations the
//! model uses. A [`Tape`] records one forward evaluation; [`Tape::backward`]
//! accumulates parameter gradients into a [`ParamStore`].

use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Node handle on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    TMatMul(usize, usize),
    Transpose(usize),
    AddBias(usize, usize),
    Silu(usize),
    Add(usize, usize),
    Scale(usize, f64),
    Mul(usize, usize),
    GatherRows(usize, Rc<[usize]>),
    ScatterAddRows(usize, Rc<[usize]>),
    SumAll(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn shape_err(op: &'static str, a: &Tensor2, b: &Tensor2) -> Error {
    Error::ShapeError {
        op,
        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, a: usize) -> bool {
        self.nodes[a].needs_grad
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(value, Op::MatMul(a.0, b.0), ng))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(value, Op::MatMulT(a.0, b.0), ng))
    }

    /// `aᵀ · b`
    pub fn t_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).t_matmul(self.value(b))?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(value, Op::TMatMul(a.0, b.0), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(a.0);
        self.push(value, Op::Transpose(a.0), ng)
    }

    /// Adds the `1 × m` row `bias` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (d, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *d += b;
            }
        }
        let ng = self.ng(x.0) || self.ng(bias.0);
        Ok(self.push(value, Op::AddBias(x.0, bias.0), ng))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(silu);
        let ng = self.ng(x.0);
        self.push(value, Op::Silu(x.0), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let value = av.zip_map(bv, |x, y| x + y);
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(value, Op::Add(a.0, b.0), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scaled(s);
        let ng = self.ng(a.0);
        self.push(value, Op::Scale(a.0, s), ng)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av, bv));
        }
        let value = av.zip_map(bv, |x, y| x * y);
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(value, Op::Mul(a.0, b.0), ng))
    }

    /// Output row `e` is input row `index[e]`.
    pub fn gather_rows(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::ShapeError {
                op: "gather_rows",
                detail: format!("row {bad} of {}", xv.rows()),
            });
        }
        let mut value = Tensor2::zeros(index.len(), xv.cols());
        for (e, &i) in index.iter().enumerate() {
            value.row_mut(e).copy_from_slice(xv.row(i));
        }
        let ng = self.ng(x.0);
        Ok(self.push(value, Op::GatherRows(x.0, index), ng))
    }

    /// Output row `index[e]` accumulates input row `e`, in ascending `e`.
    pub fn scatter_add_rows(&mut self, x: Var, index: Rc<[usize]>, rows: usize) -> Result<Var> {
        let xv = self.value(x);
        if index.len() != xv.rows() || index.iter().any(|&i| i >= rows) {
            return Err(Error::ShapeError {
                op: "scatter_add_rows",
                detail: format!("{} indices for {} rows into {rows}", index.len(), xv.rows()),
            });
        }
        let mut value = Tensor2::zeros(rows, xv.cols());
        for (e, &i) in index.iter().enumerate() {
            for (d, s) in value.row_mut(i).iter_mut().zip(xv.row(e)) {
                *d += s;
            }
        }
        let ng = self.ng(x.0);
        Ok(self.push(value, Op::ScatterAddRows(x.0, index), ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor2::filled(1, 1, self.value(x).sum());
        let ng = self.ng(x.0);
        self.push(value, Op::SumAll(x.0), ng)
    }

    /// Back-propagates `seed · d(output)/d(param)` into the store's gradient
    /// buffers. `output` must be a `1 × 1` node.
    pub fn backward(&self, output: Var, seed: f64, store: &mut ParamStore) -> Result<()> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::ShapeError {
                op: "backward",
                detail: format!("output shape {:?}", out.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor2::filled(1, 1, seed));

        fn acc(grads: &mut [Option<Tensor2>], idx: usize, g: Tensor2) {
            match &mut grads[idx] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for n in (0..=output.0).rev() {
            let Some(g) = grads[n].take() else { continue };
            let node = &self.nodes[n];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.grad_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.matmul_t(&self.nodes[*b].value)?);
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, self.nodes[*a].value.t_matmul(&g)?);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.matmul(&self.nodes[*b].value)?);
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.t_matmul(&self.nodes[*a].value)?);
                    }
                }
                Op::TMatMul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, self.nodes[*b].value.matmul_t(&g)?);
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, self.nodes[*a].value.matmul(&g)?);
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::AddBias(x, b) => {
                    if self.ng(*b) {
                        let mut gb = Tensor2::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, s) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *d += s;
                            }
                        }
                        acc(&mut grads, *b, gb);
                    }
                    if self.ng(*x) {
                        acc(&mut grads, *x, g);
                    }
                }
                Op::Silu(x) => {
                    let gx = g.zip_map(&self.nodes[*x].value, |gi, xi| gi * silu_grad(xi));
                    acc(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scaled(*s)),
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(
                            &mut grads,
                            *a,
                            g.zip_map(&self.nodes[*b].value, |x, y| x * y),
                        );
                    }
                    if self.ng(*b) {
                        acc(
                            &mut grads,
                            *b,
                            g.zip_map(&self.nodes[*a].value, |x, y| x * y),
                        );
                    }
                }
                Op::GatherRows(x, index) => {
                    let rows = self.nodes[*x].value.rows();
                    let mut gx = Tensor2::zeros(rows, g.cols());
                    for (e, &i) in index.iter().enumerate() {
                        for (d, s) in gx.row_mut(i).iter_mut().zip(g.row(e)) {
                            *d += s;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ScatterAddRows(x, index) => {
                    let mut gx = Tensor2::zeros(index.len(), g.cols());
                    for (e, &i) in index.iter().enumerate() {
                        gx.row_mut(e).copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let (r, c) = self.nodes[*x].value.shape();
                    acc(&mut grads, *x, Tensor2::filled(r, c, g.get(0, 0)));
                }
            }
        }
        Ok(())
    }
}
