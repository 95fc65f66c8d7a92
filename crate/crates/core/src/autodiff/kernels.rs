//! Raw loops behind the graph ops. Shapes are validated by the callers.

use crate::scalar::Scalar;

/// Dot product with eight independent partial sums, which lets the compiler
/// vectorize a reduction it must otherwise keep sequential.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ac.remainder().iter().zip(bc.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Geometry of a square-kernel 2-D convolution over `[C, H, W]` maps.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv2dGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
}

impl Conv2dGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.k
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.k
    }

    /// Output rows (or columns) whose tap `d` lands inside the input.
    fn valid(&self, d: usize, input: usize, output: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(d);
        let hi = (input + self.pad).saturating_sub(d).min(output);
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    g: &Conv2dGeom,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let mut out = vec![T::zero(); g.c_out * plane];
    for o in 0..g.c_out {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        if let Some(b) = bias {
            out_plane.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..g.c_in {
            let in_plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
            for dy in 0..g.k {
                let (y_lo, y_hi) = g.valid(dy, g.h, oh);
                for dx in 0..g.k {
                    let wv = kernel[((o * g.c_in + c) * g.k + dy) * g.k + dx];
                    let (x_lo, x_hi) = g.valid(dx, g.w, ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let iy = y + dy - g.pad;
                        let src = &in_plane[iy * g.w + x_lo + dx - g.pad..iy * g.w + x_hi + dx - g.pad];
                        let dst = &mut out_plane[y * ow + x_lo..y * ow + x_hi];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input, kernel and bias gradients of a 2-D convolution.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &Conv2dGeom,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_kernel: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    if let Some(gb) = grad_bias {
        for o in 0..g.c_out {
            gb[o] += grad_out[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
        }
    }
    let mut grad_input = grad_input;
    let mut grad_kernel = grad_kernel;
    for o in 0..g.c_out {
        let go = &grad_out[o * plane..(o + 1) * plane];
        for c in 0..g.c_in {
            let base = c * g.h * g.w;
            for dy in 0..g.k {
                let (y_lo, y_hi) = g.valid(dy, g.h, oh);
                for dx in 0..g.k {
                    let (x_lo, x_hi) = g.valid(dx, g.w, ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let kidx = ((o * g.c_in + c) * g.k + dy) * g.k + dx;
                    let wv = kernel[kidx];
                    let mut acc = T::zero();
                    for y in y_lo..y_hi {
                        let iy = y + dy - g.pad;
                        let (xs, xe) = (base + iy * g.w + x_lo + dx - g.pad, base + iy * g.w + x_hi + dx - g.pad);
                        let gsrc = &go[y * ow + x_lo..y * ow + x_hi];
                        if grad_kernel.is_some() {
                            let isrc = &input[xs..xe];
                            acc += dot(gsrc, isrc);
                        }
                        if let Some(gi) = grad_input.as_deref_mut() {
                            let dst = &mut gi[xs..xe];
                            for (d, &s) in dst.iter_mut().zip(gsrc) {
                                *d += wv * s;
                            }
                        }
                    }
                    if let Some(gk) = grad_kernel.as_deref_mut() {
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
}

/// Geometry of a batched 1-D convolution with same-length output.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv1dGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub k: usize,
    pub pad_left: usize,
}

impl Conv1dGeom {
    fn valid(&self, d: usize) -> (usize, usize) {
        let lo = self.pad_left.saturating_sub(d);
        let hi = (self.len + self.pad_left).saturating_sub(d).min(self.len);
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv1d_forward<T: Scalar>(
    g: &Conv1dGeom,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let l = g.len;
    let mut out = vec![T::zero(); g.batch * g.c_out * l];
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let dst = &mut out[(b * g.c_out + o) * l..(b * g.c_out + o + 1) * l];
            if let Some(bias) = bias {
                dst.iter_mut().for_each(|v| *v = bias[o]);
            }
            for c in 0..g.c_in {
                let src = &input[(b * g.c_in + c) * l..(b * g.c_in + c + 1) * l];
                for d in 0..g.k {
                    let wv = kernel[(o * g.c_in + c) * g.k + d];
                    let (lo, hi) = g.valid(d);
                    for t in lo..hi {
                        dst[t] += wv * src[t + d - g.pad_left];
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv1d_backward<T: Scalar>(
    g: &Conv1dGeom,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_kernel: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let l = g.len;
    if let Some(gb) = grad_bias {
        for b in 0..g.batch {
            for o in 0..g.c_out {
                let off = (b * g.c_out + o) * l;
                gb[o] += grad_out[off..off + l].iter().copied().sum::<T>();
            }
        }
    }
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let go = &grad_out[(b * g.c_out + o) * l..(b * g.c_out + o + 1) * l];
            for c in 0..g.c_in {
                let ioff = (b * g.c_in + c) * l;
                for d in 0..g.k {
                    let kidx = (o * g.c_in + c) * g.k + d;
                    let (lo, hi) = g.valid(d);
                    let mut acc = T::zero();
                    for t in lo..hi {
                        let it = ioff + t + d - g.pad_left;
                        acc += go[t] * input[it];
                        if let Some(gi) = grad_input.as_deref_mut() {
                            gi[it] += kernel[kidx] * go[t];
                        }
                    }
                    if let Some(gk) = grad_kernel.as_deref_mut() {
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
}

/// `out[m,n] = a[m,k] · b[k,n]`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Accumulates `ga += g · bᵀ` and `gb += aᵀ · g`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    grad: &[T],
    m: usize,
    k: usize,
    n: usize,
    ga: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    if let Some(ga) = ga {
        for i in 0..m {
            let grow = &grad[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                ga[i * k + p] += dot(grow, brow);
            }
        }
    }
    if let Some(gb) = gb {
        for i in 0..m {
            let grow = &grad[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                    *o += av * gv;
                }
            }
        }
    }
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
