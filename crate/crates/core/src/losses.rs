//! Training losses: SSIM for images, mean squared error for power series.

use crate::autodiff::{Graph, Padding, Var};
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized `n x n` Gaussian window as a `[1, 1, n, n]` kernel.
pub fn gaussian_window<T: Scalar>(n: usize, sigma: f64) -> Tensor<T> {
    let centre = (n as f64 - 1.0) / 2.0;
    let line: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - centre).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = line.iter().sum::<f64>().powi(2);
    let data: Vec<f64> = line
        .iter()
        .flat_map(|a| line.iter().map(move |b| a * b / total))
        .collect();
    Tensor::from_f64([1, 1, n, n], &data).expect("window shape")
}

/// Mean SSIM between two `[C, H, W]` images of dynamic range `range`,
/// averaged over channels and over every fully contained window position.
/// Images smaller than the window shrink it to `min(H, W)`.
pub fn ssim_graph<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, range: f64) -> Result<Var> {
    let shape = g.shape(a).to_vec();
    if shape != g.shape(b) || shape.len() != 3 {
        return Err(TensorError::shape(
            "ssim",
            format!("{shape:?} vs {:?}, need equal [C, H, W]", g.shape(b)),
        ));
    }
    if !(range > 0.0) {
        return Err(TensorError::invalid("ssim", format!("dynamic range {range} must be positive")));
    }
    let n = SSIM_WINDOW.min(shape[1]).min(shape[2]);
    let window = g.constant(gaussian_window(n, SSIM_SIGMA));
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mut per_channel = Vec::with_capacity(shape[0]);
    for ch in 0..shape[0] {
        let x = g.select(a, ch)?;
        let y = g.select(b, ch)?;
        let x = g.reshape(x, [1, shape[1], shape[2]])?;
        let y = g.reshape(y, [1, shape[1], shape[2]])?;
        let xx = g.mul(x, x)?;
        let yy = g.mul(y, y)?;
        let xy = g.mul(x, y)?;
        let mut filt = |v| g.conv2d(v, window, None, Padding::Valid);
        let (mu_x, mu_y) = (filt(x)?, filt(y)?);
        let (e_xx, e_yy, e_xy) = (filt(xx)?, filt(yy)?, filt(xy)?);

        let mu_xx = g.mul(mu_x, mu_x)?;
        let mu_yy = g.mul(mu_y, mu_y)?;
        let mu_xy = g.mul(mu_x, mu_y)?;
        let var_x = g.sub(e_xx, mu_xx)?;
        let var_y = g.sub(e_yy, mu_yy)?;
        let cov = g.sub(e_xy, mu_xy)?;

        let lum_num = g.scale(mu_xy, 2.0);
        let lum_num = g.add_scalar(lum_num, c1);
        let con_num = g.scale(cov, 2.0);
        let con_num = g.add_scalar(con_num, c2);
        let lum_den = g.add(mu_xx, mu_yy)?;
        let lum_den = g.add_scalar(lum_den, c1);
        let con_den = g.add(var_x, var_y)?;
        let con_den = g.add_scalar(con_den, c2);
        let num = g.mul(lum_num, con_num)?;
        let den = g.mul(lum_den, con_den)?;
        let map = g.div(num, den)?;
        let m = g.mean(map);
        per_channel.push(g.reshape(m, [1])?);
    }
    let stacked = g.concat(&per_channel)?;
    Ok(g.mean(stacked))
}

/// `1 - SSIM` on images normalized to `[0, 1]`.
pub fn ssim_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let s = ssim_graph(g, pred, target, 1.0)?;
    Ok(g.one_minus(s))
}

/// Value-only SSIM with dynamic range `range`.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, range: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let s = ssim_graph(&mut g, x, y, range)?;
    Ok(g.value(s).data()[0].to_f64_lossy())
}

/// Mean squared error between equally shaped tensors.
pub fn mse<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}
