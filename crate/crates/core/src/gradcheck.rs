//! Central finite-difference verification of backward rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Fault, Graph, Padding, PoolMode, Var};
use crate::cells::{
    cbam_convlstm_step, convlstm_step, sa_convlstm_step, CbamConvLstmParams, CellState, ConvLstmParams, SaConvLstmParams,
};
use crate::error::{Result, TensorError};
use crate::params::{Bound, Initializer, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares backward gradients of the scalar function `f` at `point`
/// against central differences with the given `step`, returning the maximum
/// component-wise relative error.
pub fn gradcheck<T, F>(f: F, point: &Tensor<T>, step: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    gradcheck_many(|g, vars| f(g, vars[0]), std::slice::from_ref(point), step)
}

/// Multi-input form of [`gradcheck`]; every input is perturbed.
pub fn gradcheck_many<T, F>(f: F, points: &[Tensor<T>], step: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    gradcheck_with_fault(f, points, step, Fault::None)
}

pub fn gradcheck_with_fault<T, F>(f: F, points: &[Tensor<T>], step: f64, fault: Fault) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g
            .value(out)
            .item()
            .ok_or_else(|| TensorError::NonScalarLoss(g.shape(out).to_vec()))?
            .to_f64_lossy();
        if !v.is_finite() {
            return Err(TensorError::NonFinite(format!("function value {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::with_fault(fault);
    let vars: Vec<Var> = points.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut work = points.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(points[which].shape().to_vec());
        let analytic = grads.get(*var).unwrap_or(&zeros).clone();
        if !analytic.is_finite() {
            return Err(TensorError::NonFinite(format!("analytic gradient of input {which}")));
        }
        for i in 0..points[which].numel() {
            let orig = points[which].data()[i];
            work[which].data_mut()[i] = orig + T::of(step);
            let plus = eval(&work)?;
            work[which].data_mut()[i] = orig - T::of(step);
            let minus = eval(&work)?;
            work[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic.data()[i].to_f64_lossy(), numeric);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Maximum relative error accepted by [`run_suite`].
pub const SUITE_TOLERANCE: f64 = 1e-4;

/// Worst relative error of one suite case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub max_error: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_error < SUITE_TOLERANCE
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Weighted sum with fixed pseudo-random weights.
fn probe(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let n = g.value(y).numel();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 113) as f64 / 113.0) - 0.4).collect();
    let wv = g.constant(Tensor::new(g.shape(y).to_vec(), w)?);
    let m = g.mul(y, wv)?;
    Ok(g.sum(m))
}

type CaseFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

fn cell_case(
    rng: &mut ChaCha8Rng,
    params: &ParamSet<f64>,
    memory: bool,
    step: impl Fn(&mut Graph<f64>, &Bound, Var, &CellState) -> Result<CellState> + 'static,
) -> (CaseFn, Vec<Tensor<f64>>) {
    let hidden = 2;
    let mut points = vec![
        random_tensor(rng, &[1, 8, 8], 1.0),
        random_tensor(rng, &[hidden, 8, 8], 0.9),
        random_tensor(rng, &[hidden, 8, 8], 1.0),
        random_tensor(rng, &[hidden, 8, 8], 1.0),
    ];
    let lead = points.len();
    points.extend(params.values().iter().map(|t| {
        let jitter = random_tensor(rng, t.shape(), 0.3);
        Tensor::new(t.shape().to_vec(), t.data().iter().zip(jitter.data()).map(|(a, b)| a + b).collect())
            .expect("same shape")
    }));
    let f: CaseFn = Box::new(move |g, v| {
        let bound = Bound::new(v[lead..].to_vec());
        let state = CellState {
            h: v[1],
            c: v[2],
            m: memory.then_some(v[3]),
        };
        let out = step(g, &bound, v[0], &state)?;
        let mut loss = probe(g, out.h)?;
        let c = probe(g, out.c)?;
        loss = g.add(loss, c)?;
        if let Some(m) = out.m {
            let m = probe(g, m)?;
            loss = g.add(loss, m)?;
        }
        Ok(loss)
    });
    (f, points)
}

/// Checks every differentiable graph operation, the SSIM loss and the three
/// recurrent cell steps on random instances no larger than `4 x 8 x 8`.
/// Every graph is built with `fault`.
pub fn run_suite(seed: u64, fault: Fault) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_tensor(&mut rng, &[4, 8, 8], 1.0);
    let b = random_tensor(&mut rng, &[4, 8, 8], 1.0);
    let positive = a.map(|v| v.abs() + 0.5);
    let unit = a.map(|v| 0.5 + 0.4 * v);
    let unit_b = b.map(|v| 0.5 + 0.4 * v);

    let mut cases: Vec<(&str, CaseFn, Vec<Tensor<f64>>)> = vec![
        ("add", Box::new(|g, v| { let y = g.add(v[0], v[1])?; probe(g, y) }), vec![a.clone(), b.clone()]),
        ("sub", Box::new(|g, v| { let y = g.sub(v[0], v[1])?; probe(g, y) }), vec![a.clone(), b.clone()]),
        ("mul", Box::new(|g, v| { let y = g.mul(v[0], v[1])?; probe(g, y) }), vec![a.clone(), b.clone()]),
        ("div", Box::new(|g, v| { let y = g.div(v[0], v[1])?; probe(g, y) }), vec![a.clone(), positive.clone()]),
        ("scale", Box::new(|g, v| { let y = g.scale(v[0], -1.7); probe(g, y) }), vec![a.clone()]),
        ("add_scalar", Box::new(|g, v| { let y = g.add_scalar(v[0], 0.3); probe(g, y) }), vec![a.clone()]),
        ("one_minus", Box::new(|g, v| { let y = g.one_minus(v[0]); probe(g, y) }), vec![a.clone()]),
        ("sigmoid", Box::new(|g, v| { let y = g.sigmoid(v[0]); probe(g, y) }), vec![a.clone()]),
        ("tanh", Box::new(|g, v| { let y = g.tanh(v[0]); probe(g, y) }), vec![a.clone()]),
        ("relu", Box::new(|g, v| { let y = g.relu(v[0]); probe(g, y) }), vec![a.clone()]),
        ("clamp", Box::new(|g, v| { let y = g.clamp(v[0], -0.5, 0.5); probe(g, y) }), vec![a.clone()]),
        (
            "conv2d",
            Box::new(|g, v| { let y = g.conv2d(v[0], v[1], Some(v[2]), Padding::Same)?; probe(g, y) }),
            vec![a.clone(), random_tensor(&mut rng, &[3, 4, 3, 3], 0.5), random_tensor(&mut rng, &[3], 0.5)],
        ),
        (
            "conv2d_sigmoid",
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], None, Padding::Same)?;
                let s = g.sigmoid(y);
                probe(g, s)
            }),
            vec![a.clone(), random_tensor(&mut rng, &[2, 4, 3, 3], 0.5)],
        ),
        (
            "conv1d",
            Box::new(|g, v| { let y = g.conv1d(v[0], v[1], Some(v[2]))?; probe(g, y) }),
            vec![random_tensor(&mut rng, &[4, 2, 8], 1.0), random_tensor(&mut rng, &[3, 2, 3], 0.5), random_tensor(&mut rng, &[3], 0.5)],
        ),
        (
            "dense",
            Box::new(|g, v| { let y = g.dense(v[0], v[1], Some(v[2]))?; probe(g, y) }),
            vec![random_tensor(&mut rng, &[4, 8], 1.0), random_tensor(&mut rng, &[5, 8], 0.5), random_tensor(&mut rng, &[5], 0.5)],
        ),
        (
            "matmul",
            Box::new(|g, v| { let y = g.matmul(v[0], v[1])?; probe(g, y) }),
            vec![random_tensor(&mut rng, &[4, 8], 1.0), random_tensor(&mut rng, &[8, 4], 1.0)],
        ),
        ("transpose", Box::new(|g, v| { let y = g.transpose(v[0])?; probe(g, y) }), vec![random_tensor(&mut rng, &[4, 8], 1.0)]),
        ("channel_bias", Box::new(|g, v| { let y = g.channel_bias(v[0], v[1])?; probe(g, y) }), vec![a.clone(), random_tensor(&mut rng, &[4], 1.0)]),
        ("scale_channels", Box::new(|g, v| { let y = g.scale_channels(v[0], v[1])?; probe(g, y) }), vec![a.clone(), random_tensor(&mut rng, &[4], 1.0)]),
        ("scale_pixels", Box::new(|g, v| { let y = g.scale_pixels(v[0], v[1])?; probe(g, y) }), vec![a.clone(), random_tensor(&mut rng, &[1, 8, 8], 1.0)]),
        ("pool_avg_spatial", Box::new(|g, v| { let y = g.pool(v[0], PoolMode::GlobalAvgSpatial)?; probe(g, y) }), vec![a.clone()]),
        ("pool_max_spatial", Box::new(|g, v| { let y = g.pool(v[0], PoolMode::GlobalMaxSpatial)?; probe(g, y) }), vec![a.clone()]),
        ("pool_avg_channels", Box::new(|g, v| { let y = g.pool(v[0], PoolMode::AvgOverChannels)?; probe(g, y) }), vec![a.clone()]),
        ("pool_max_channels", Box::new(|g, v| { let y = g.pool(v[0], PoolMode::MaxOverChannels)?; probe(g, y) }), vec![a.clone()]),
        ("softmax", Box::new(|g, v| { let y = g.softmax(v[0], 2)?; probe(g, y) }), vec![a.clone()]),
        ("sum", Box::new(|g, v| { let y = g.mul(v[0], v[0])?; Ok(g.sum(y)) }), vec![a.clone()]),
        ("mean", Box::new(|g, v| { let y = g.mul(v[0], v[0])?; Ok(g.mean(y)) }), vec![a.clone()]),
        ("mean_axis", Box::new(|g, v| { let y = g.mean_axis(v[0], 1)?; probe(g, y) }), vec![a.clone()]),
        ("reshape", Box::new(|g, v| { let y = g.reshape(v[0], [16, 16])?; probe(g, y) }), vec![a.clone()]),
        ("concat", Box::new(|g, v| { let y = g.concat(&[v[0], v[1]])?; probe(g, y) }), vec![a.clone(), random_tensor(&mut rng, &[1, 8, 8], 1.0)]),
        ("select", Box::new(|g, v| { let y = g.select(v[0], 1)?; probe(g, y) }), vec![a.clone()]),
        (
            "ssim",
            Box::new(|g, v| {
                let s0 = g.select(v[0], 0)?;
                let s1 = g.select(v[1], 0)?;
                let x = g.reshape(s0, [1, 8, 8])?;
                let y = g.reshape(s1, [1, 8, 8])?;
                crate::losses::ssim_graph(g, x, y, 1.0)
            }),
            vec![unit, unit_b],
        ),
    ];

    let mut init = Initializer::new(seed);
    let mut params = ParamSet::new();
    let p = ConvLstmParams::register(&mut params, &mut init, "convlstm", 1, 2, 3)?;
    let (f, points) = cell_case(&mut rng, &params, false, move |g, bd, x, s| convlstm_step(g, bd, &p, x, s));
    cases.push(("convlstm_step", f, points));

    let mut params = ParamSet::new();
    let p = CbamConvLstmParams::register(&mut params, &mut init, "cbam", 1, 2, 3, 2, 3)?;
    let (f, points) = cell_case(&mut rng, &params, false, move |g, bd, x, s| cbam_convlstm_step(g, bd, &p, x, s));
    cases.push(("cbam_convlstm_step", f, points));

    let mut params = ParamSet::new();
    let p = SaConvLstmParams::register(&mut params, &mut init, "sa", 1, 2, 3, None)?;
    let (f, points) = cell_case(&mut rng, &params, true, move |g, bd, x, s| sa_convlstm_step(g, bd, &p, x, s));
    cases.push(("sa_convlstm_step", f, points));

    cases
        .into_iter()
        .map(|(name, f, points)| {
            Ok(SuiteEntry {
                name: name.to_string(),
                max_error: gradcheck_with_fault(|g, v| f(g, v), &points, 1e-5, fault)?,
            })
        })
        .collect()
}
