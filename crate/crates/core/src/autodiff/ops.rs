use super::kernels::{self, axis_extents, Conv1dGeom, Conv2dGeom};
use super::{Graph, Op, Padding, PoolMode, Var};
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_op(value, node, &[a, b]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, node: Op<T>) -> Var {
        let value = self.value(a).map(f);
        self.push_op(value, node, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: impl Into<f64>) -> Var {
        let c = T::of(c.into());
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: impl Into<f64>) -> Var {
        let c = T::of(c.into());
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    /// 2-D convolution of `[C_in, H, W]` by `[C_out, C_in, k, k]`, optional `[C_out]` bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, padding: Padding) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        if si.len() != 3 || sk.len() != 4 || sk[2] != sk[3] {
            return Err(TensorError::shape(
                "conv2d",
                format!("input {si:?} must be [C,H,W], kernel {sk:?} must be [O,C,k,k]"),
            ));
        }
        if si[0] != sk[1] {
            return Err(TensorError::shape(
                "conv2d",
                format!("input has {} channels, kernel expects {}", si[0], sk[1]),
            ));
        }
        let k = sk[2];
        let pad = match padding {
            Padding::Same if k % 2 == 0 => {
                return Err(TensorError::invalid("conv2d", format!("same padding needs odd kernel, got {k}")))
            }
            Padding::Same => (k - 1) / 2,
            Padding::Valid if k > si[1] || k > si[2] => {
                return Err(TensorError::shape("conv2d", format!("kernel {k} larger than input {si:?}")))
            }
            Padding::Valid => 0,
        };
        if let Some(b) = bias {
            if self.shape(b) != [sk[0]] {
                return Err(TensorError::shape("conv2d", format!("bias {:?} vs {} outputs", self.shape(b), sk[0])));
            }
        }
        let geom = Conv2dGeom {
            c_in: si[0],
            c_out: sk[0],
            h: si[1],
            w: si[2],
            k,
            pad,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.data(input),
            self.data(kernel),
            bias.map(|b| self.data(b)),
        );
        let value = Tensor::new([geom.c_out, geom.out_h(), geom.out_w()], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        Ok(self.push_op(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &deps,
        ))
    }

    /// Same-length 1-D convolution of `[C_in, L]` or `[B, C_in, L]` by `[C_out, C_in, k]`.
    ///
    /// Padding puts `(k - 1) / 2` zeros on the left and the rest on the right,
    /// so even kernels are accepted too.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        let (batch, c_in, len) = match si.as_slice() {
            [c, l] => (1, *c, *l),
            [b, c, l] => (*b, *c, *l),
            _ => return Err(TensorError::shape("conv1d", format!("input {si:?} must be [C,L] or [B,C,L]"))),
        };
        if sk.len() != 3 || sk[1] != c_in {
            return Err(TensorError::shape(
                "conv1d",
                format!("kernel {sk:?} incompatible with {c_in} input channels"),
            ));
        }
        if sk[2] > len {
            return Err(TensorError::shape("conv1d", format!("kernel {} longer than sequence {len}", sk[2])));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sk[0]] {
                return Err(TensorError::shape("conv1d", format!("bias {:?} vs {} outputs", self.shape(b), sk[0])));
            }
        }
        let geom = Conv1dGeom {
            batch,
            c_in,
            c_out: sk[0],
            len,
            k: sk[2],
            pad_left: (sk[2] - 1) / 2,
        };
        let out = kernels::conv1d_forward(
            &geom,
            self.data(input),
            self.data(kernel),
            bias.map(|b| self.data(b)),
        );
        let shape = if si.len() == 2 {
            vec![geom.c_out, len]
        } else {
            vec![batch, geom.c_out, len]
        };
        let value = Tensor::new(shape, out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        Ok(self.push_op(
            value,
            Op::Conv1d {
                input,
                kernel,
                bias,
                geom,
            },
            &deps,
        ))
    }

    /// Affine map `weight · input + bias` for `[n]` or batched `[B, n]` input, weight `[m, n]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if sw.len() != 2 || si.is_empty() || si.len() > 2 || *si.last().unwrap() != sw[1] {
            return Err(TensorError::shape("dense", format!("input {si:?} vs weight {sw:?}")));
        }
        let (m, n) = (sw[0], sw[1]);
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(TensorError::shape("dense", format!("bias {:?} vs {m} outputs", self.shape(b))));
            }
        }
        let batch = if si.len() == 2 { si[0] } else { 1 };
        let (x, w) = (self.data(input), self.data(weight));
        let mut out = vec![T::zero(); batch * m];
        for bi in 0..batch {
            let xrow = &x[bi * n..(bi + 1) * n];
            for i in 0..m {
                let dot = kernels::dot(&w[i * n..(i + 1) * n], xrow);
                out[bi * m + i] = dot + bias.map_or(T::zero(), |b| self.data(b)[i]);
            }
        }
        let shape = if si.len() == 2 { vec![batch, m] } else { vec![m] };
        let value = Tensor::new(shape, out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        Ok(self.push_op(value, Op::Dense { input, weight, bias }, &deps))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.data(a), self.data(b), m, k, n);
        let value = Tensor::new([m, n], out)?;
        Ok(self.push_op(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::shape("transpose", format!("{s:?} is not a matrix")));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.data(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let value = Tensor::new([c, r], out)?;
        Ok(self.push_op(value, Op::Transpose(a), &[a]))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[C, ...]` tensor.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.is_empty() || sb != [sx[0]] {
            return Err(TensorError::shape("channel_bias", format!("{sx:?} + {sb:?}")));
        }
        let c = sx[0];
        let inner = self.value(x).numel() / c;
        let b = self.data(bias);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i / inner])
            .collect();
        let value = Tensor::new(sx.to_vec(), data)?;
        Ok(self.push_op(value, Op::ChannelBias(x, bias), &[x, bias]))
    }

    /// `x[c, ...] * s[c]`: one weight per channel, broadcast over pixels.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if sx.is_empty() || ss != [sx[0]] {
            return Err(TensorError::shape("scale_channels", format!("{sx:?} * {ss:?}")));
        }
        let inner = self.value(x).numel() / sx[0];
        let sv = self.data(s);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sv[i / inner])
            .collect();
        let value = Tensor::new(sx.to_vec(), data)?;
        Ok(self.push_op(value, Op::ScaleChannels(x, s), &[x, s]))
    }

    /// `x[c, p] * s[p]`: one weight per pixel, broadcast over channels.
    pub fn scale_pixels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        let p: usize = ss.iter().product();
        if sx.len() < 2 || sx[1..].iter().product::<usize>() != p {
            return Err(TensorError::shape("scale_pixels", format!("{sx:?} * {ss:?}")));
        }
        let sv = self.data(s);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sv[i % p])
            .collect();
        let value = Tensor::new(sx.to_vec(), data)?;
        Ok(self.push_op(value, Op::ScalePixels(x, s), &[x, s]))
    }

    pub fn pool(&mut self, input: Var, mode: PoolMode) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() < 2 {
            return Err(TensorError::shape("pool", format!("{s:?} lacks channel and spatial dims")));
        }
        let c = s[0];
        let p: usize = s[1..].iter().product();
        let x = self.data(input);
        let mut argmax = Vec::new();
        let (shape, data) = match mode {
            PoolMode::GlobalAvgSpatial => {
                let n = T::of(p as f64);
                let d = (0..c)
                    .map(|ch| x[ch * p..(ch + 1) * p].iter().copied().sum::<T>() / n)
                    .collect();
                (vec![c], d)
            }
            PoolMode::GlobalMaxSpatial => {
                let d = (0..c)
                    .map(|ch| {
                        let (i, v) = argmax_of(&x[ch * p..(ch + 1) * p]);
                        argmax.push(i);
                        v
                    })
                    .collect();
                (vec![c], d)
            }
            PoolMode::AvgOverChannels => {
                let n = T::of(c as f64);
                let d = (0..p)
                    .map(|i| (0..c).map(|ch| x[ch * p + i]).sum::<T>() / n)
                    .collect();
                (channel_pooled_shape(&s), d)
            }
            PoolMode::MaxOverChannels => {
                let d = (0..p)
                    .map(|i| {
                        let mut best = 0;
                        for ch in 1..c {
                            if x[ch * p + i] > x[best * p + i] {
                                best = ch;
                            }
                        }
                        argmax.push(best);
                        x[best * p + i]
                    })
                    .collect();
                (channel_pooled_shape(&s), d)
            }
        };
        let value = Tensor::new(shape, data)?;
        Ok(self.push_op(value, Op::Pool { input, mode, argmax }, &[input]))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() {
            return Err(TensorError::invalid("softmax", format!("axis {axis} for shape {s:?}")));
        }
        let (outer, dim, inner) = axis_extents(&s, axis);
        let x = self.data(input);
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * dim + j) * inner + i;
                let max = (0..dim).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..dim {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..dim {
                    out[at(j)] /= total;
                }
            }
        }
        let value = Tensor::new(s, out)?;
        Ok(self.push_op(value, Op::Softmax { input, axis }, &[input]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.data(a).iter().copied().sum::<T>();
        self.push_op(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.data(a);
        let total = x.iter().copied().sum::<T>() / T::of(x.len() as f64);
        self.push_op(Tensor::scalar(total), Op::Mean(a), &[a])
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() || s.len() < 2 {
            return Err(TensorError::invalid("mean_axis", format!("axis {axis} for shape {s:?}")));
        }
        let (outer, dim, inner) = axis_extents(&s, axis);
        let x = self.data(input);
        let inv = T::one() / T::of(dim as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..dim {
                for i in 0..inner {
                    out[o * inner + i] += x[(o * dim + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = s;
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, Op::MeanAxis { input, axis }, &[input]))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push_op(value, Op::Reshape(a), &[a]))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no parts"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(TensorError::shape("concat", format!("{s:?} vs trailing {tail:?}")));
            }
            lead += s[0];
            data.extend_from_slice(self.data(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.push_op(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Slice `index` of the leading axis.
    pub fn select(&mut self, input: Var, index: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() < 2 || index >= s[0] {
            return Err(TensorError::shape("select", format!("index {index} of {s:?}")));
        }
        let n: usize = s[1..].iter().product();
        let data = self.data(input)[index * n..(index + 1) * n].to_vec();
        let value = Tensor::new(s[1..].to_vec(), data)?;
        Ok(self.push_op(value, Op::Select { input, index }, &[input]))
    }
}

fn argmax_of<T: Scalar>(xs: &[T]) -> (usize, T) {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    (best, xs[best])
}

fn channel_pooled_shape(s: &[usize]) -> Vec<usize> {
    let mut shape = s.to_vec();
    shape[0] = 1;
    shape
}
