//! Straight-line reference computations on plain `f64` slices, written
//! without the autodiff graph so that they can serve as independent oracles.

#![allow(dead_code)]

use std::collections::HashMap;

use cloudcast_core::ParamSet;

/// Parameter values by name, copied out of a [`ParamSet`].
pub struct Weights(HashMap<String, Vec<f64>>);

impl Weights {
    pub fn of(params: &ParamSet<f64>) -> Self {
        Weights(
            params
                .iter()
                .map(|(n, t)| (n.to_string(), t.data().to_vec()))
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> &[f64] {
        self.0
            .get(name)
            .unwrap_or_else(|| panic!("no parameter {name}"))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Same-padded 2-D convolution of `[c_in, h, w]` with `[c_out, c_in, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_same(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    c_out: usize,
    k: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let pad = (k as isize - 1) / 2;
    let mut out = vec![0.0; c_out * h * w];
    for o in 0..c_out {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for c in 0..c_in {
                    for dy in 0..k {
                        for dx in 0..k {
                            let iy = y as isize + dy as isize - pad;
                            let ix = x as isize + dx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += input[(c * h + iy as usize) * w + ix as usize]
                                * kernel[((o * c_in + c) * k + dy) * k + dx];
                        }
                    }
                }
                out[(o * h + y) * w + x] = acc;
            }
        }
    }
    out
}

/// Same-padded 1-D convolution of `[c_in, len]` with `[c_out, c_in, k]`;
/// even kernels put the extra zero on the right.
pub fn conv1d_same(
    input: &[f64],
    c_in: usize,
    len: usize,
    kernel: &[f64],
    c_out: usize,
    k: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let left = (k as isize - 1) / 2;
    let mut out = vec![0.0; c_out * len];
    for o in 0..c_out {
        for t in 0..len {
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for c in 0..c_in {
                for d in 0..k {
                    let it = t as isize + d as isize - left;
                    if it >= 0 && (it as usize) < len {
                        acc += input[c * len + it as usize] * kernel[(o * c_in + c) * k + d];
                    }
                }
            }
            out[o * len + t] = acc;
        }
    }
    out
}

/// Dimensions shared by the cell oracles.
#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

fn gate_preactivation(
    wt: &Weights,
    prefix: &str,
    gate: &str,
    d: Dims,
    x: &[f64],
    h: &[f64],
    refine: &dyn Fn(&str, &[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let from_h = conv2d_same(h, d.hidden, d.h, d.w, wt.get(&format!("{prefix}.w_{gate}h")), d.hidden, d.k, None);
    let from_x = conv2d_same(x, d.input, d.h, d.w, wt.get(&format!("{prefix}.w_{gate}x")), d.hidden, d.k, None);
    let from_h = refine(&format!("{gate}h"), &from_h);
    let from_x = refine(&format!("{gate}x"), &from_x);
    let bias = wt.get(&format!("{prefix}.b_{gate}"));
    let plane = d.h * d.w;
    (0..d.hidden * plane)
        .map(|i| from_h[i] + from_x[i] + bias[i / plane])
        .collect()
}

fn lstm_core(
    wt: &Weights,
    prefix: &str,
    d: Dims,
    x: &[f64],
    h: &[f64],
    c: &[f64],
    refine: &dyn Fn(&str, &[f64]) -> Vec<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let pi = gate_preactivation(wt, prefix, "i", d, x, h, refine);
    let po = gate_preactivation(wt, prefix, "o", d, x, h, refine);
    let pf = gate_preactivation(wt, prefix, "f", d, x, h, refine);
    let pc = gate_preactivation(wt, prefix, "c", d, x, h, refine);
    let mut h_new = vec![0.0; c.len()];
    let mut c_new = vec![0.0; c.len()];
    for j in 0..c.len() {
        let i = sigmoid(pi[j]);
        let o = sigmoid(po[j]);
        let f = sigmoid(pf[j]);
        c_new[j] = i * pc[j].tanh() + f * c[j];
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

pub fn convlstm(wt: &Weights, prefix: &str, d: Dims, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    lstm_core(wt, prefix, d, x, h, c, &|_, v| v.to_vec())
}

/// CBAM on a `[c, h, w]` map with the parameters stored under `prefix`.
pub fn cbam(wt: &Weights, prefix: &str, f: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let w1 = wt.get(&format!("{prefix}.mlp_w1"));
    let b1 = wt.get(&format!("{prefix}.mlp_b1"));
    let w2 = wt.get(&format!("{prefix}.mlp_w2"));
    let b2 = wt.get(&format!("{prefix}.mlp_b2"));
    let mid = b1.len();
    let mlp = |v: &[f64]| -> Vec<f64> {
        let hid: Vec<f64> = (0..mid)
            .map(|r| (b1[r] + (0..c).map(|j| w1[r * c + j] * v[j]).sum::<f64>()).max(0.0))
            .collect();
        (0..c)
            .map(|r| b2[r] + (0..mid).map(|j| w2[r * mid + j] * hid[j]).sum::<f64>())
            .collect()
    };
    let avg: Vec<f64> = (0..c)
        .map(|ch| f[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect();
    let max: Vec<f64> = (0..c)
        .map(|ch| f[ch * plane..(ch + 1) * plane].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let (ma, mm) = (mlp(&avg), mlp(&max));
    let mut refined = f.to_vec();
    for ch in 0..c {
        let s = sigmoid(ma[ch] + mm[ch]);
        for p in 0..plane {
            refined[ch * plane + p] *= s;
        }
    }
    let mut pooled = vec![0.0; 2 * plane];
    for p in 0..plane {
        let vals: Vec<f64> = (0..c).map(|ch| refined[ch * plane + p]).collect();
        pooled[p] = vals.iter().sum::<f64>() / c as f64;
        pooled[plane + p] = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    let ks = (wt.get(&format!("{prefix}.spatial_w")).len() as f64 / 2.0).sqrt() as usize;
    let logits = conv2d_same(
        &pooled,
        2,
        h,
        w,
        wt.get(&format!("{prefix}.spatial_w")),
        1,
        ks,
        Some(wt.get(&format!("{prefix}.spatial_b"))),
    );
    for ch in 0..c {
        for p in 0..plane {
            refined[ch * plane + p] *= sigmoid(logits[p]);
        }
    }
    refined
}

pub fn cbam_convlstm(wt: &Weights, prefix: &str, d: Dims, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    lstm_core(wt, prefix, d, x, h, c, &|term, v| {
        cbam(wt, &format!("{prefix}.cbam_{term}"), v, d.hidden, d.h, d.w)
    })
}

/// Attention weights `[n, n]` (query-major) for both branches and the mixed `Z`.
pub struct AttentionOracle {
    pub weights_h: Vec<f64>,
    pub weights_m: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn attention(wt: &Weights, prefix: &str, h: &[f64], m: &[f64], c: usize, hh: usize, ww: usize) -> AttentionOracle {
    let n = hh * ww;
    let proj = |name: &str, src: &[f64]| -> (Vec<f64>, usize) {
        let b = wt.get(&format!("{prefix}.{name}_b"));
        let out = conv2d_same(src, c, hh, ww, wt.get(&format!("{prefix}.{name}_w")), b.len(), 1, Some(b));
        (out, b.len())
    };
    let (q, d) = proj("q_h", h);
    let (kh, _) = proj("k_h", h);
    let (vh, _) = proj("v_h", h);
    let (km, _) = proj("k_m", m);
    let (vm, _) = proj("v_m", m);
    let branch = |k: &[f64], v: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut weights = vec![0.0; n * n];
        let mut z = vec![0.0; c * n];
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|e| q[e * n + i] * k[e * n + j]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            for j in 0..n {
                weights[i * n + j] = exps[j] / total;
            }
            for ch in 0..c {
                z[ch * n + i] = (0..n).map(|j| weights[i * n + j] * v[ch * n + j]).sum();
            }
        }
        (weights, z)
    };
    let (weights_h, zh) = branch(&kh, &vh);
    let (weights_m, zm) = branch(&km, &vm);
    let cat: Vec<f64> = zh.iter().chain(&zm).copied().collect();
    let z = conv2d_same(
        &cat,
        2 * c,
        hh,
        ww,
        wt.get(&format!("{prefix}.mix_w")),
        c,
        1,
        Some(wt.get(&format!("{prefix}.mix_b"))),
    );
    AttentionOracle { weights_h, weights_m, z }
}

/// Returns `(ĥ, C, M)`.
pub fn sa_convlstm(
    wt: &Weights,
    prefix: &str,
    d: Dims,
    x: &[f64],
    h: &[f64],
    c: &[f64],
    m: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (h1, c1) = convlstm(wt, prefix, d, x, h, c);
    let sam = format!("{prefix}.sam");
    let z = attention(wt, &sam, &h1, m, d.hidden, d.h, d.w).z;
    let plane = d.h * d.w;
    let pre = |wh: &str, wz: &str, b: &str| -> Vec<f64> {
        let a = conv2d_same(&h1, d.hidden, d.h, d.w, wt.get(&format!("{sam}.{wh}")), d.hidden, d.k, None);
        let bz = conv2d_same(&z, d.hidden, d.h, d.w, wt.get(&format!("{sam}.{wz}")), d.hidden, d.k, None);
        let bias = wt.get(&format!("{sam}.{b}"));
        (0..a.len()).map(|j| a[j] + bz[j] + bias[j / plane]).collect()
    };
    let pi = pre("w_ih", "w_iz", "b_i");
    let po = pre("w_oh", "w_oz", "b_o");
    let pm = pre("w_mh", "w_mz", "b_m");
    let mut h_hat = vec![0.0; m.len()];
    let mut m_new = vec![0.0; m.len()];
    for j in 0..m.len() {
        let i = sigmoid(pi[j]);
        m_new[j] = i * pm[j].tanh() + (1.0 - i) * m[j];
        h_hat[j] = sigmoid(po[j]) * m_new[j].tanh();
    }
    (h_hat, c1, m_new)
}

/// Direct-formula mean SSIM of two `h x w` images with an 11x11 (or
/// shrunk) Gaussian window, sigma 1.5.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> f64 {
    let n = 11.min(h).min(w);
    let centre = (n as f64 - 1.0) / 2.0;
    let mut win = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let r2 = (i as f64 - centre).powi(2) + (j as f64 - centre).powi(2);
            win[i * n + j] = (-r2 / 4.5).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let mut acc = 0.0;
    let mut count = 0;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let p = (y0 + i) * w + x0 + j;
                    let wv = win[i * n + j];
                    ma += wv * a[p];
                    mb += wv * b[p];
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let p = (y0 + i) * w + x0 + j;
                    let wv = win[i * n + j];
                    saa += wv * (a[p] - ma).powi(2);
                    sbb += wv * (b[p] - mb).powi(2);
                    sab += wv * (a[p] - ma) * (b[p] - mb);
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * sab + c2)) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Max absolute difference of two slices.
pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
