//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is the computation record: every op appends a node holding
//! its output value, its inputs and whatever the backward rule needs. Calling
//! [`Graph::backward`] on a scalar node walks the record in reverse and
//! returns a fresh [`Gradients`] table, leaving the record untouched, so
//! repeated backward passes are bit-identical.
//!
//! ```
//! use cloudcast_core::autodiff::Graph;
//! use cloudcast_core::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
//! let y = g.scale(x, 2.0);
//! let loss = g.sum(y);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
//! ```

mod kernels;
mod ops;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use kernels::{axis_extents, Conv1dGeom, Conv2dGeom};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Zero padding policy for 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `(k - 1) / 2` zeros per side; requires odd `k`, keeps `H x W`.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    /// `[C, H, W] -> [C]`
    GlobalAvgSpatial,
    /// `[C, H, W] -> [C]`
    GlobalMaxSpatial,
    /// `[C, H, W] -> [1, H, W]`
    AvgOverChannels,
    /// `[C, H, W] -> [1, H, W]`
    MaxOverChannels,
}

/// Deliberate backward-rule corruption used to prove the gradient checker
/// catches broken rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    FlipTanhBackward,
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Clamp(Var, T, T),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: Conv2dGeom,
    },
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: Conv1dGeom,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MatMul(Var, Var),
    Transpose(Var),
    ChannelBias(Var, Var),
    ScaleChannels(Var, Var),
    ScalePixels(Var, Var),
    Pool {
        input: Var,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    MeanAxis {
        input: Var,
        axis: usize,
    },
    Reshape(Var),
    Concat(Vec<Var>),
    Select {
        input: Var,
        index: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation record of one forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    fault: Fault,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            fault: Fault::None,
        }
    }

    pub fn with_fault(fault: Fault) -> Self {
        Graph {
            nodes: Vec::new(),
            fault,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    fn data(&self, var: Var) -> &[T] {
        self.nodes[var.0].value.data()
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.apply_rule(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad).map(|g| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), g)
                        .expect("gradient matches node shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn apply_rule(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(d, &s)| *d -= s)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |ga| {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += s * y;
                    }
                });
                self.acc(grads, *b, |gb| {
                    for ((d, &s), &x) in gb.iter_mut().zip(g).zip(av) {
                        *d += s * x;
                    }
                });
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |ga| {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += s / y;
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (((d, &s), &x), &y) in gb.iter_mut().zip(g).zip(av).zip(bv) {
                        *d -= s * x / (y * y);
                    }
                });
            }
            Op::Scale(a, c) => self.acc(grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *c)
            }),
            Op::AddScalar(a) => self.acc(grads, *a, |ga| add_into(ga, g)),
            Op::Sigmoid(a) => self.acc(grads, *a, |ga| {
                for ((d, &s), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += s * y * (T::one() - y);
                }
            }),
            Op::Tanh(a) => {
                let sign = match self.fault {
                    Fault::FlipTanhBackward => -T::one(),
                    Fault::None => T::one(),
                };
                self.acc(grads, *a, |ga| {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(out) {
                        *d += sign * s * (T::one() - y * y);
                    }
                })
            }
            Op::Relu(a) => self.acc(grads, *a, |ga| {
                for ((d, &s), &y) in ga.iter_mut().zip(g).zip(out) {
                    if y > T::zero() {
                        *d += s;
                    }
                }
            }),
            Op::Clamp(a, lo, hi) => {
                let x = self.data(*a);
                self.acc(grads, *a, |ga| {
                    for ((d, &s), &xv) in ga.iter_mut().zip(g).zip(x) {
                        if xv >= *lo && xv <= *hi {
                            *d += s;
                        }
                    }
                })
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (x, k) = (self.data(*input), self.data(*kernel));
                let mut gi = self.take_if_needed(grads, *input);
                let mut gk = self.take_if_needed(grads, *kernel);
                let mut gb = bias.and_then(|b| self.take_if_needed(grads, b));
                kernels::conv2d_backward(
                    geom,
                    x,
                    k,
                    g,
                    gi.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                restore(grads, *input, gi);
                restore(grads, *kernel, gk);
                if let Some(b) = bias {
                    restore(grads, *b, gb);
                }
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (x, k) = (self.data(*input), self.data(*kernel));
                let mut gi = self.take_if_needed(grads, *input);
                let mut gk = self.take_if_needed(grads, *kernel);
                let mut gb = bias.and_then(|b| self.take_if_needed(grads, b));
                kernels::conv1d_backward(
                    geom,
                    x,
                    k,
                    g,
                    gi.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                restore(grads, *input, gi);
                restore(grads, *kernel, gk);
                if let Some(b) = bias {
                    restore(grads, *b, gb);
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                // y[b, i] = sum_j w[i, j] x[b, j] + bias[i]
                let x = self.data(*input);
                let w = self.nodes[weight.0].value.shape();
                let (m, n) = (w[0], w[1]);
                let batch = x.len() / n;
                let wv = self.data(*weight);
                // x · wᵀ has the matmul layout [batch, n] x [n, m]; reuse it via w as [m, n].
                self.acc(grads, *input, |gx| {
                    let r = kernels::matmul(g, wv, batch, m, n);
                    add_into(gx, &r);
                });
                self.acc(grads, *weight, |gw| {
                    for bi in 0..batch {
                        let xrow = &x[bi * n..(bi + 1) * n];
                        for i in 0..m {
                            let gv = g[bi * m + i];
                            for (d, &xv) in gw[i * n..(i + 1) * n].iter_mut().zip(xrow) {
                                *d += gv * xv;
                            }
                        }
                    }
                });
                if let Some(b) = bias {
                    self.acc(grads, *b, |gb| {
                        for bi in 0..batch {
                            add_into(gb, &g[bi * m..(bi + 1) * m]);
                        }
                    });
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.data(*a), self.data(*b));
                let mut ga = self.take_if_needed(grads, *a);
                let mut gb = self.take_if_needed(grads, *b);
                kernels::matmul_backward(av, bv, g, m, k, n, ga.as_deref_mut(), gb.as_deref_mut());
                restore(grads, *a, ga);
                restore(grads, *b, gb);
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[0], s[1]);
                self.acc(grads, *a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::ChannelBias(x, b) => {
                self.acc(grads, *x, |gx| add_into(gx, g));
                let c = self.shape(*b)[0];
                let inner = g.len() / c;
                self.acc(grads, *b, |gb| {
                    for ch in 0..c {
                        gb[ch] += g[ch * inner..(ch + 1) * inner].iter().copied().sum::<T>();
                    }
                });
            }
            Op::ScaleChannels(x, s) => {
                let (xv, sv) = (self.data(*x), self.data(*s));
                let inner = xv.len() / sv.len();
                self.acc(grads, *x, |gx| {
                    for (ch, &sc) in sv.iter().enumerate() {
                        let r = ch * inner..(ch + 1) * inner;
                        for (d, &gv) in gx[r.clone()].iter_mut().zip(&g[r]) {
                            *d += gv * sc;
                        }
                    }
                });
                self.acc(grads, *s, |gs| {
                    for (ch, d) in gs.iter_mut().enumerate() {
                        let r = ch * inner..(ch + 1) * inner;
                        *d += kernels::dot(&g[r.clone()], &xv[r]);
                    }
                });
            }
            Op::ScalePixels(x, s) => {
                let (xv, sv) = (self.data(*x), self.data(*s));
                let p = sv.len();
                let c = xv.len() / p;
                self.acc(grads, *x, |gx| {
                    for ch in 0..c {
                        for i in 0..p {
                            gx[ch * p + i] += g[ch * p + i] * sv[i];
                        }
                    }
                });
                self.acc(grads, *s, |gs| {
                    for ch in 0..c {
                        for i in 0..p {
                            gs[i] += g[ch * p + i] * xv[ch * p + i];
                        }
                    }
                });
            }
            Op::Pool {
                input,
                mode,
                argmax,
            } => {
                let s = self.shape(*input);
                let c = s[0];
                let p: usize = s[1..].iter().product();
                self.acc(grads, *input, |gi| match mode {
                    PoolMode::GlobalAvgSpatial => {
                        let inv = T::one() / T::of(p as f64);
                        for ch in 0..c {
                            let gv = g[ch] * inv;
                            gi[ch * p..(ch + 1) * p].iter_mut().for_each(|d| *d += gv);
                        }
                    }
                    PoolMode::GlobalMaxSpatial => {
                        for ch in 0..c {
                            gi[ch * p + argmax[ch]] += g[ch];
                        }
                    }
                    PoolMode::AvgOverChannels => {
                        let inv = T::one() / T::of(c as f64);
                        for ch in 0..c {
                            for i in 0..p {
                                gi[ch * p + i] += g[i] * inv;
                            }
                        }
                    }
                    PoolMode::MaxOverChannels => {
                        for i in 0..p {
                            gi[argmax[i] * p + i] += g[i];
                        }
                    }
                });
            }
            Op::Softmax { input, axis } => {
                let (outer, dim, inner) = axis_extents(self.shape(*input), *axis);
                self.acc(grads, *input, |gi| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * dim + j) * inner + i;
                            let dot: T = (0..dim).map(|j| g[at(j)] * out[at(j)]).sum();
                            for j in 0..dim {
                                gi[at(j)] += out[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |ga| ga.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = T::of(self.nodes[a.0].value.numel() as f64);
                self.acc(grads, *a, |ga| ga.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::MeanAxis { input, axis } => {
                let (outer, dim, inner) = axis_extents(self.shape(*input), *axis);
                let inv = T::one() / T::of(dim as f64);
                self.acc(grads, *input, |gi| {
                    for o in 0..outer {
                        for j in 0..dim {
                            for i in 0..inner {
                                gi[(o * dim + j) * inner + i] += g[o * inner + i] * inv;
                            }
                        }
                    }
                });
            }
            Op::Reshape(a) => self.acc(grads, *a, |ga| add_into(ga, g)),
            Op::Concat(parts) => {
                let mut off = 0;
                for part in parts {
                    let n = self.nodes[part.0].value.numel();
                    self.acc(grads, *part, |gp| add_into(gp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Select { input, index } => {
                let n = g.len();
                self.acc(grads, *input, |gi| {
                    add_into(&mut gi[index * n..(index + 1) * n], g)
                });
            }
        }
    }

    /// Runs `f` on the gradient buffer of `var` if it participates.
    fn acc(&self, grads: &mut [Option<Vec<T>>], var: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let n = self.nodes[var.0].value.numel();
        let buf = grads[var.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }

    fn take_if_needed(&self, grads: &mut [Option<Vec<T>>], var: Var) -> Option<Vec<T>> {
        if !self.nodes[var.0].requires_grad {
            return None;
        }
        let n = self.nodes[var.0].value.numel();
        Some(grads[var.0].take().unwrap_or_else(|| vec![T::zero(); n]))
    }
}

fn restore<T>(grads: &mut [Option<Vec<T>>], var: Var, buf: Option<Vec<T>>) {
    if let Some(buf) = buf {
        grads[var.0] = Some(buf);
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
