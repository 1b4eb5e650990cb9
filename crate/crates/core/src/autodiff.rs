//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`]
//! walks the tape once in reverse. Parameters are borrowed into the tape so
//! that short inference tapes cost nothing to set up.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{self, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var> },
    MaxPool { x: Var, argmax: Vec<u32> },
    Upsample { x: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Scale { x: Var, factor: f64 },
    Mean(Var),
    WeightedSum { terms: Vec<(Var, f64)> },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
    backpropagated: bool,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`; `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, materialising zeros for disconnected leaves.
    pub fn take_or_zero(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backpropagated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op, requires_grad: bool) -> Var {
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

    /// Trainable leaf borrowed from the caller.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// Owned leaf; `requires_grad` marks it as differentiable.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Consume the tape, moving out the values of `vars`.
    pub fn into_values(mut self, vars: &[Var]) -> Vec<Tensor<T>> {
        vars.iter()
            .map(|v| {
                let slot = &mut self.nodes[v.0].value;
                std::mem::replace(slot, Cow::Owned(Tensor::zeros(&[0]))).into_owned()
            })
            .collect()
    }

    fn unary(&mut self, x: Var, value: Tensor<T>, op: Op) -> Var {
        let rg = self.rg(x);
        self.push(Cow::Owned(value), op, rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = tensor::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Cow::Owned(out), Op::Conv2d { x, w, b }, rg))
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Var {
        let (out, argmax) = tensor::maxpool2x2(self.value(x));
        self.unary(x, out, Op::MaxPool { x, argmax })
    }

    /// Nearest ×2 upsampling cropped to `(h, w)`.
    pub fn upsample2x(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = tensor::upsample2x(self.value(x), h, w)?;
        Ok(self.unary(x, out, Op::Upsample { x }))
    }

    /// Concatenate `[C_i,H,W]` maps along channels.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).chw();
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, h, w) = self.value(p).chw();
            if (h, w) != (first.1, first.2) {
                return Err(Error::ShapeMismatch(format!(
                    "concat of {h}x{w} with {}x{}",
                    first.1, first.2
                )));
            }
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::new(vec![channels, first.1, first.2], data)?;
        Ok(self.push(
            Cow::Owned(out),
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Channels `start..start+len` of a `[C,H,W]` map.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw();
        if start + len > c {
            return Err(Error::ShapeMismatch(format!(
                "channel slice {start}..{} of {c} channels",
                start + len
            )));
        }
        let hw = h * w;
        let data = self.value(x).data()[start * hw..(start + len) * hw].to_vec();
        let out = Tensor::new(vec![len, h, w], data)?;
        Ok(self.unary(x, out, Op::Slice { x, start }))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch(format!(
                "elementwise op on {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out = self.value(a).zip_map(self.value(b), f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.unary(x, out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.unary(x, out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.unary(x, out, Op::Relu(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::lit(lo), T::lit(hi));
        let out = self.value(x).map(|v| v.max(l).min(h));
        self.unary(x, out, Op::Clamp { x, lo, hi })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::lit(factor);
        let out = self.value(x).map(|v| v * f);
        self.unary(x, out, Op::Scale { x, factor })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        self.unary(x, out, Op::Mean(x))
    }

    /// `Σ weight_i · term_i` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = T::zero();
        for &(v, wgt) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "weighted_sum term of shape {:?}",
                    self.value(v).shape()
                )));
            }
            acc += self.value(v).item() * T::lit(wgt);
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(
            Cow::Owned(Tensor::scalar(acc)),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from the scalar `loss`. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.backpropagated {
            return Err(Error::AlreadyBackpropagated);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward from non-scalar of shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backpropagated = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let cg = tensor::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    self.rg(*x),
                    self.rg(*w),
                    b.is_some_and(|b| self.rg(b)),
                )?;
                if let Some(dx) = cg.dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = cg.dw {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (&idx, &gv) in argmax.iter().zip(g.data()) {
                    d[idx as usize] += gv;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Upsample { x } => {
                let (_, h, w) = self.value(*x).chw();
                self.accumulate(grads, *x, tensor::upsample2x_backward(g, h, w));
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape().to_vec();
                    let len = self.value(p).len();
                    if self.rg(p) {
                        let part = Tensor::new(shape, g.data()[offset..offset + len].to_vec())?;
                        self.accumulate(grads, p, part);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, start } => {
                let src = self.value(*x);
                let (_, h, w) = src.chw();
                let mut dx = Tensor::zeros(src.shape());
                let off = start * h * w;
                dx.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |gv, bv| gv * bv));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |gv, av| gv * av));
                }
            }
            Op::Sigmoid(x) => {
                let dx = g.zip_map(out, |gv, s| gv * s * (T::one() - s));
                self.accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let dx = g.zip_map(out, |gv, t| gv * (T::one() - t * t));
                self.accumulate(grads, *x, dx);
            }
            Op::Relu(x) => {
                let dx = g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, *x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let (l, h) = (T::lit(*lo), T::lit(*hi));
                let dx = g.zip_map(self.value(*x), |gv, xv| {
                    if xv > l && xv < h {
                        gv
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *x, dx);
            }
            Op::Scale { x, factor } => {
                let f = T::lit(*factor);
                self.accumulate(grads, *x, g.map(|v| v * f));
            }
            Op::Mean(x) => {
                let src = self.value(*x);
                let gv = g.item() / T::from_usize(src.len()).unwrap();
                self.accumulate(grads, *x, Tensor::full(src.shape(), gv));
            }
            Op::WeightedSum { terms } => {
                for &(v, wgt) in terms {
                    let shape = self.value(v).shape().to_vec();
                    self.accumulate(grads, v, Tensor::full(&shape, g.item() * T::lit(wgt)));
                }
            }
        }
        Ok(())
    }
}
