//! Reverse-mode automatic differentiation on dense f64 matrices.
//!
//! A [`Tape`] records a dynamic graph of matrix operations. Leaves are either
//! constants (no gradient) or parameters. [`Tape::backward`] walks the graph
//! once, in reverse, from a scalar output and returns the adjoint of every
//! parameter that influenced it. The tape is built per training step and
//! dropped with its graph after the backward pass; nothing is retained
//! between steps.
//!
//! Values are `(rows, cols)` matrices throughout; batches sit in rows and
//! scalars are `(1, 1)`. Subtrees that no parameter feeds into are skipped
//! during the backward walk.

use ndarray::{Array2, Axis};

use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise nonlinearities the tape knows how to differentiate.
///
/// `Relu` uses subgradient 0 at exactly 0. `Sigmoid` exists so that recorded
/// input-gradient sweeps of softplus networks stay differentiable; it is not
/// offered as a layer activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TapeAct {
    Relu,
    LeakyRelu(f64),
    Softplus,
    Sigmoid,
}

pub(crate) fn softplus(z: f64) -> f64 {
    // ln(1 + e^z) without overflow on either tail.
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl TapeAct {
    fn apply(self, z: f64) -> f64 {
        match self {
            TapeAct::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            TapeAct::LeakyRelu(slope) => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            TapeAct::Softplus => softplus(z),
            TapeAct::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative in terms of the input `z` and the already-computed output.
    fn deriv(self, z: f64, out: f64) -> f64 {
        match self {
            TapeAct::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TapeAct::LeakyRelu(slope) => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            TapeAct::Softplus => sigmoid(z),
            TapeAct::Sigmoid => out * (1.0 - out),
        }
    }
}

enum Op {
    /// Data leaf; receives no gradient.
    Constant,
    /// Parameter leaf; its adjoint is what callers collect.
    Param,
    /// `a @ b`
    Matmul(Var, Var),
    /// `a @ b.T` — used when recording backward sweeps as forward ops.
    MatmulTb(Var, Var),
    /// `(m, k) + (1, k)` with the row broadcast over the batch.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Elementwise product, same shapes.
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Activation(Var, TapeAct),
    Square(Var),
    /// `sqrt(x + shift)`; the shift keeps norms differentiable at zero.
    SqrtShift(Var),
    /// `(m, k) -> (m, 1)` row sums.
    SumCols(Var),
    /// `(m, k) -> (1, 1)`.
    SumAll(Var),
    /// `(m, k) -> (1, 1)`, dividing by the element count.
    MeanAll(Var),
    /// Column concatenation `[a | b]`.
    AppendCols(Var, Var),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`]. Index with the [`Var`] handles
/// of parameter leaves; constants and unused parameters yield `None`.
pub struct Grads {
    adj: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.adj.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `(1, 1)` node as a plain f64.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Param, value, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Matmul(a, b), value, ng)
    }

    /// `a @ b.T`.
    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value.t());
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatmulTb(a, b), value, ng)
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = &self.nodes[bias.0].value;
        debug_assert_eq!(b.nrows(), 1);
        let value = &self.nodes[x.0].value + b;
        let ng = self.needs(x) || self.needs(bias);
        self.push(Op::AddBias(x, bias), value, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), value, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), value, ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = &self.nodes[x.0].value * c;
        let ng = self.needs(x);
        self.push(Op::Scale(x, c), value, ng)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = &self.nodes[x.0].value + c;
        let ng = self.needs(x);
        self.push(Op::AddScalar(x), value, ng)
    }

    pub fn activation(&mut self, x: Var, act: TapeAct) -> Var {
        let value = self.nodes[x.0].value.mapv(|z| act.apply(z));
        let ng = self.needs(x);
        self.push(Op::Activation(x, act), value, ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|z| z * z);
        let ng = self.needs(x);
        self.push(Op::Square(x), value, ng)
    }

    pub fn sqrt_shift(&mut self, x: Var, shift: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|z| (z + shift).sqrt());
        let ng = self.needs(x);
        self.push(Op::SqrtShift(x), value, ng)
    }

    pub fn sum_cols(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let value = v.sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.needs(x);
        self.push(Op::SumCols(x), value, ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.sum();
        let ng = self.needs(x);
        self.push(Op::SumAll(x), Array2::from_elem((1, 1), s), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let s = v.sum() / v.len() as f64;
        let ng = self.needs(x);
        self.push(Op::MeanAll(x), Array2::from_elem((1, 1), s), ng)
    }

    pub fn append_cols(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        debug_assert_eq!(va.nrows(), vb.nrows());
        let mut value = Array2::zeros((va.nrows(), va.ncols() + vb.ncols()));
        value.slice_mut(ndarray::s![.., ..va.ncols()]).assign(va);
        value.slice_mut(ndarray::s![.., va.ncols()..]).assign(vb);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::AppendCols(a, b), value, ng)
    }

    /// Reverse pass from a scalar node. Errors if `out` is not `(1, 1)`.
    pub fn backward(&self, out: Var) -> Result<Grads> {
        if self.nodes[out.0].value.len() != 1 {
            return Err(Error::invalid_arg(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[out.0].value.dim()
            )));
        }
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[out.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                adj[i] = None;
                continue;
            }
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Constant | Op::Param => {
                    adj[i] = Some(g);
                }
                Op::Matmul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.nodes[b.0].value.t());
                        accumulate(&mut adj[a.0], ga);
                    }
                    if self.needs(*b) {
                        let gb = self.nodes[a.0].value.t().dot(&g);
                        accumulate(&mut adj[b.0], gb);
                    }
                }
                Op::MatmulTb(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.nodes[b.0].value);
                        accumulate(&mut adj[a.0], ga);
                    }
                    if self.needs(*b) {
                        let gb = g.t().dot(&self.nodes[a.0].value);
                        accumulate(&mut adj[b.0], gb);
                    }
                }
                Op::AddBias(x, bias) => {
                    if self.needs(*bias) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut adj[bias.0], gb);
                    }
                    if self.needs(*x) {
                        accumulate(&mut adj[x.0], g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut adj[b.0], g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut adj[a.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut adj[b.0], -&g);
                    }
                    if self.needs(*a) {
                        accumulate(&mut adj[a.0], g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let ga = &g * &self.nodes[b.0].value;
                        accumulate(&mut adj[a.0], ga);
                    }
                    if self.needs(*b) {
                        let gb = &g * &self.nodes[a.0].value;
                        accumulate(&mut adj[b.0], gb);
                    }
                }
                Op::Scale(x, c) => {
                    accumulate(&mut adj[x.0], &g * *c);
                }
                Op::AddScalar(x) => {
                    accumulate(&mut adj[x.0], g);
                }
                Op::Activation(x, act) => {
                    let zin = &self.nodes[x.0].value;
                    let out_v = &self.nodes[i].value;
                    let mut gx = g;
                    ndarray::Zip::from(&mut gx)
                        .and(zin)
                        .and(out_v)
                        .for_each(|gg, &z, &o| *gg *= act.deriv(z, o));
                    accumulate(&mut adj[x.0], gx);
                }
                Op::Square(x) => {
                    let gx = 2.0 * &g * &self.nodes[x.0].value;
                    accumulate(&mut adj[x.0], gx);
                }
                Op::SqrtShift(x) => {
                    let out_v = &self.nodes[i].value;
                    let gx = 0.5 * &g / out_v;
                    accumulate(&mut adj[x.0], gx);
                }
                Op::SumCols(x) => {
                    let (m, k) = self.nodes[x.0].value.dim();
                    let mut gx = Array2::zeros((m, k));
                    for r in 0..m {
                        let gr = g[[r, 0]];
                        gx.row_mut(r).fill(gr);
                    }
                    accumulate(&mut adj[x.0], gx);
                }
                Op::SumAll(x) => {
                    let gx = Array2::from_elem(self.nodes[x.0].value.dim(), g[[0, 0]]);
                    accumulate(&mut adj[x.0], gx);
                }
                Op::MeanAll(x) => {
                    let n = self.nodes[x.0].value.len() as f64;
                    let gx = Array2::from_elem(self.nodes[x.0].value.dim(), g[[0, 0]] / n);
                    accumulate(&mut adj[x.0], gx);
                }
                Op::AppendCols(a, b) => {
                    let ka = self.nodes[a.0].value.ncols();
                    if self.needs(*a) {
                        let ga = g.slice(ndarray::s![.., ..ka]).to_owned();
                        accumulate(&mut adj[a.0], ga);
                    }
                    if self.needs(*b) {
                        let gb = g.slice(ndarray::s![.., ka..]).to_owned();
                        accumulate(&mut adj[b.0], gb);
                    }
                }
            }
        }
        Ok(Grads { adj })
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, contribution: Array2<f64>) {
    match slot {
        Some(existing) => *existing += &contribution,
        None => *slot = Some(contribution),
    }
}
