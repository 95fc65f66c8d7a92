//! Power forecasters mapping the past hour of power (and optionally the
//! horizon cloud pixels above the site) to the next six power values.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Result, TensorError};
use crate::params::{Bound, Initializer, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Number of input and output time steps.
pub const STEPS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Mlp,
    Cnn1d,
    Lstm,
}

impl NetKind {
    pub const ALL: [NetKind; 3] = [NetKind::Mlp, NetKind::Cnn1d, NetKind::Lstm];

    pub fn as_str(self) -> &'static str {
        match self {
            NetKind::Mlp => "mlp",
            NetKind::Cnn1d => "cnn1d",
            NetKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        NetKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for NetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Resolved hyperparameters of one solar network.
#[derive(Clone, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SolarNetSpec {
    pub kind: NetKind,
    /// Hidden, convolution or LSTM layers.
    pub layers: usize,
    /// Neurons, filters or LSTM units per layer.
    pub width: usize,
    /// Convolution kernel length; ignored by the other kinds.
    pub kernel: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl SolarNetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(TensorError::invalid("solar_net_spec", detail));
        if self.layers == 0 {
            return bad(format!("{} needs at least one layer", self.kind));
        }
        if self.width == 0 {
            return bad("layer width must be positive".into());
        }
        if self.kind == NetKind::Cnn1d && (self.kernel == 0 || self.kernel > STEPS) {
            return bad(format!("kernel {} must lie in 1..={STEPS}", self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        Ok(())
    }
}

/// Integer hyperparameter domain: an inclusive range or an explicit set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntDomain {
    Range { min: usize, max: usize },
    Choices(Vec<usize>),
}

impl IntDomain {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            IntDomain::Range { min, max } => {
                if min >= max {
                    *min
                } else {
                    rng.gen_range(*min..=*max)
                }
            }
            IntDomain::Choices(c) => c[rng.gen_range(0..c.len())],
        }
    }

    pub fn contains(&self, v: usize) -> bool {
        match self {
            IntDomain::Range { min, max } => (*min..=*max).contains(&v),
            IntDomain::Choices(c) => c.contains(&v),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            IntDomain::Range { min, max } => min > max,
            IntDomain::Choices(c) => c.is_empty(),
        }
    }
}

/// Search ranges for one network kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolarSearchSpace {
    pub kind: NetKind,
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
    pub layers: IntDomain,
    pub width: IntDomain,
    pub kernel: IntDomain,
    pub dropout: (f64, f64),
    pub epochs: IntDomain,
    pub batch_size: IntDomain,
}

impl SolarSearchSpace {
    /// Published tuning ranges; batch sizes run up to the training-set size.
    pub fn table(kind: NetKind, train_samples: usize) -> Self {
        let batch_size = IntDomain::Range {
            min: 1,
            max: train_samples.max(1),
        };
        match kind {
            NetKind::Mlp => SolarSearchSpace {
                kind,
                learning_rate: (1e-4, 0.1),
                layers: IntDomain::Range { min: 1, max: 5 },
                width: IntDomain::Range { min: 1, max: 256 },
                kernel: IntDomain::Choices(vec![1]),
                dropout: (0.0, 0.5),
                epochs: IntDomain::Range { min: 100, max: 2000 },
                batch_size,
            },
            NetKind::Cnn1d => SolarSearchSpace {
                kind,
                learning_rate: (1e-4, 0.1),
                layers: IntDomain::Range { min: 1, max: 5 },
                width: IntDomain::Choices(vec![32, 64]),
                kernel: IntDomain::Choices(vec![2, 3]),
                dropout: (0.0, 0.5),
                epochs: IntDomain::Range { min: 500, max: 2000 },
                batch_size,
            },
            NetKind::Lstm => SolarSearchSpace {
                kind,
                learning_rate: (1e-4, 0.1),
                layers: IntDomain::Range { min: 1, max: 5 },
                width: IntDomain::Choices(vec![32, 64]),
                kernel: IntDomain::Choices(vec![1]),
                dropout: (0.0, 0.0),
                epochs: IntDomain::Range { min: 500, max: 2000 },
                batch_size,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.learning_rate;
        let (dlo, dhi) = self.dropout;
        let domains = [&self.layers, &self.width, &self.kernel, &self.epochs, &self.batch_size];
        if !(lo > 0.0 && lo <= hi) || !(0.0 <= dlo && dlo <= dhi && dhi < 1.0) || domains.iter().any(|d| d.is_empty()) {
            return Err(TensorError::invalid("solar_search_space", format!("{self:?}")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> SolarNetSpec {
        let (lo, hi) = self.learning_rate;
        let learning_rate = if lo >= hi {
            lo
        } else {
            (rng.gen_range(lo.ln()..=hi.ln())).exp().clamp(lo, hi)
        };
        let (dlo, dhi) = self.dropout;
        let dropout = if dlo >= dhi { dlo } else { rng.gen_range(dlo..=dhi) };
        SolarNetSpec {
            kind: self.kind,
            layers: self.layers.sample(rng),
            width: self.width.sample(rng),
            kernel: self.kernel.sample(rng),
            dropout,
            epochs: self.epochs.sample(rng),
            batch_size: self.batch_size.sample(rng),
            learning_rate,
        }
    }

    pub fn contains(&self, spec: &SolarNetSpec) -> bool {
        spec.kind == self.kind
            && (self.learning_rate.0..=self.learning_rate.1).contains(&spec.learning_rate)
            && (self.dropout.0..=self.dropout.1).contains(&spec.dropout)
            && self.layers.contains(spec.layers)
            && self.width.contains(spec.width)
            && self.kernel.contains(spec.kernel)
            && self.epochs.contains(spec.epochs)
            && self.batch_size.contains(spec.batch_size)
    }
}

/// A batch of normalized inputs: power over capacity, pixels over 255.
#[derive(Clone, Debug, PartialEq)]
pub struct SolarBatch<T> {
    /// `[B, 6]`
    pub past_power: Tensor<T>,
    /// `[B, 6]`, absent for networks trained without clouds.
    pub horizon_clouds: Option<Tensor<T>>,
}

impl<T: Scalar> SolarBatch<T> {
    pub fn len(&self) -> usize {
        self.past_power.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn features(&self) -> usize {
        if self.horizon_clouds.is_some() {
            2
        } else {
            1
        }
    }

    fn check(&self, with_clouds: bool) -> Result<()> {
        let b = self.past_power.shape();
        if b.len() != 2 || b[1] != STEPS {
            return Err(TensorError::shape("solar_batch", format!("past power {b:?} is not [B, 6]")));
        }
        match (&self.horizon_clouds, with_clouds) {
            (Some(c), true) if c.shape() == b => Ok(()),
            (None, false) => Ok(()),
            (Some(c), true) => Err(TensorError::shape("solar_batch", format!("clouds {:?} vs power {b:?}", c.shape()))),
            (Some(_), false) => Err(TensorError::invalid("solar_batch", "cloud input fed to a network trained without clouds")),
            (None, true) => Err(TensorError::invalid("solar_batch", "network trained with clouds got no cloud input")),
        }
    }

    /// `[B, 12]` (power then clouds) or `[B, 6]`.
    fn flat(&self) -> Tensor<T> {
        let b = self.len();
        let f = self.features();
        let mut data = Vec::with_capacity(b * f * STEPS);
        for i in 0..b {
            data.extend_from_slice(&self.past_power.data()[i * STEPS..(i + 1) * STEPS]);
            if let Some(c) = &self.horizon_clouds {
                data.extend_from_slice(&c.data()[i * STEPS..(i + 1) * STEPS]);
            }
        }
        Tensor::new([b, f * STEPS], data).expect("flat shape")
    }

    /// `[B, F, 6]` with power as channel 0.
    fn channels(&self) -> Tensor<T> {
        let f = self.features();
        self.flat().reshape([self.len(), f, STEPS]).expect("channel shape")
    }

    /// Step `t` as `[B, F]`.
    fn at_step(&self, t: usize) -> Tensor<T> {
        let b = self.len();
        let mut data = Vec::with_capacity(b * self.features());
        for i in 0..b {
            data.push(self.past_power.data()[i * STEPS + t]);
            if let Some(c) = &self.horizon_clouds {
                data.push(c.data()[i * STEPS + t]);
            }
        }
        Tensor::new([b, self.features()], data).expect("step shape")
    }
}

/// Forward-pass mode; training draws inverted-dropout masks from the rng.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Clone, Copy, Debug)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct LstmLayer {
    /// Gate order i, o, f, c.
    x: [ParamId; 4],
    h: [ParamId; 4],
    b: [ParamId; 4],
}

#[derive(Clone, Debug)]
enum Body {
    Mlp(Vec<Affine>),
    Cnn(Vec<Affine>),
    Lstm(Vec<LstmLayer>),
}

/// One site's power forecaster.
#[derive(Clone, Debug)]
pub struct SolarNet<T> {
    spec: SolarNetSpec,
    with_clouds: bool,
    params: ParamSet<T>,
    body: Body,
    head: Affine,
}

impl<T: Scalar> SolarNet<T> {
    pub fn new(spec: SolarNetSpec, with_clouds: bool, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let mut init = Initializer::new(seed);
        let features = if with_clouds { 2 } else { 1 };
        let width = spec.width;
        let affine = |params: &mut ParamSet<T>, name: &str, w: Tensor<T>, outs: usize| -> Result<Affine> {
            Ok(Affine {
                w: params.add(format!("{name}.w"), w)?,
                b: params.add(format!("{name}.b"), Tensor::zeros([outs]))?,
            })
        };
        let body = match spec.kind {
            NetKind::Mlp => {
                let mut layers = Vec::new();
                let mut fan = features * STEPS;
                for l in 0..spec.layers {
                    let w = init.uniform(&[width, fan], fan);
                    layers.push(affine(&mut params, &format!("layer{l}"), w, width)?);
                    fan = width;
                }
                Body::Mlp(layers)
            }
            NetKind::Cnn1d => {
                let mut layers = Vec::new();
                let mut chans = features;
                for l in 0..spec.layers {
                    let w = init.kernel(&[width, chans, spec.kernel]);
                    layers.push(affine(&mut params, &format!("layer{l}"), w, width)?);
                    chans = width;
                }
                Body::Cnn(layers)
            }
            NetKind::Lstm => {
                let mut layers = Vec::new();
                let mut fan = features;
                for l in 0..spec.layers {
                    let mut gate = |kind: &str, g: &str, shape: [usize; 2]| -> Result<ParamId> {
                        let t = if kind == "b" {
                            Tensor::zeros([width])
                        } else {
                            init.uniform(&shape, shape[1])
                        };
                        let name = if kind == "b" {
                            format!("layer{l}.b_{g}")
                        } else {
                            format!("layer{l}.w_{g}{kind}")
                        };
                        params.add(name, t)
                    };
                    let gates = ["i", "o", "f", "c"];
                    let mut x = Vec::new();
                    let mut h = Vec::new();
                    let mut b = Vec::new();
                    for g in gates {
                        x.push(gate("x", g, [width, fan])?);
                        h.push(gate("h", g, [width, width])?);
                        b.push(gate("b", g, [width, 0])?);
                    }
                    layers.push(LstmLayer {
                        x: x.try_into().expect("four gates"),
                        h: h.try_into().expect("four gates"),
                        b: b.try_into().expect("four gates"),
                    });
                    fan = width;
                }
                Body::Lstm(layers)
            }
        };
        let w = init.uniform(&[STEPS, width], width);
        let head = affine(&mut params, "head", w, STEPS)?;
        Ok(SolarNet {
            spec,
            with_clouds,
            params,
            body,
            head,
        })
    }

    pub fn from_params(spec: SolarNetSpec, with_clouds: bool, params: &ParamSet<T>) -> Result<Self> {
        let mut net = SolarNet::new(spec, with_clouds, 0)?;
        net.params.load_from(params)?;
        Ok(net)
    }

    pub fn spec(&self) -> &SolarNetSpec {
        &self.spec
    }

    pub fn with_clouds(&self) -> bool {
        self.with_clouds
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn dropout(&self, g: &mut Graph<T>, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let p = self.spec.dropout;
        let Mode::Train(rng) = mode else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let shape = g.shape(x).to_vec();
        let n = shape.iter().product();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mask = g.constant(Tensor::new(shape, mask)?);
        g.mul(x, mask)
    }

    /// `[B, 6]` predictions.
    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, batch: &SolarBatch<T>, mode: Mode<'_>) -> Result<Var> {
        let features = self.features(g, bound, batch, mode)?;
        g.dense(features, bound.get(self.head.w), Some(bound.get(self.head.b)))
    }

    /// Body output fed to the linear head. For the CNN this is the
    /// time-averaged `[B, filters]`; `conv_maps` exposes the maps before averaging.
    pub fn features(&self, g: &mut Graph<T>, bound: &Bound, batch: &SolarBatch<T>, mode: Mode<'_>) -> Result<Var> {
        let x = self.body_output(g, bound, batch, mode)?;
        if matches!(self.body, Body::Cnn(_)) {
            g.mean_axis(x, 2)
        } else {
            Ok(x)
        }
    }

    /// `[B, filters, 6]` output of the convolution stack.
    pub fn conv_maps(&self, g: &mut Graph<T>, bound: &Bound, batch: &SolarBatch<T>, mode: Mode<'_>) -> Result<Var> {
        if !matches!(self.body, Body::Cnn(_)) {
            return Err(TensorError::invalid("conv_maps", format!("{} has no convolution stack", self.spec.kind)));
        }
        self.body_output(g, bound, batch, mode)
    }

    fn body_output(&self, g: &mut Graph<T>, bound: &Bound, batch: &SolarBatch<T>, mut mode: Mode<'_>) -> Result<Var> {
        batch.check(self.with_clouds)?;
        Ok(match &self.body {
            Body::Mlp(layers) => {
                let mut x = g.constant(batch.flat());
                for l in layers {
                    let y = g.dense(x, bound.get(l.w), Some(bound.get(l.b)))?;
                    let y = g.relu(y);
                    x = self.dropout(g, y, &mut mode)?;
                }
                x
            }
            Body::Cnn(layers) => {
                let mut x = g.constant(batch.channels());
                for l in layers {
                    let y = g.conv1d(x, bound.get(l.w), Some(bound.get(l.b)))?;
                    let y = g.relu(y);
                    x = self.dropout(g, y, &mut mode)?;
                }
                x
            }
            Body::Lstm(layers) => {
                let b = batch.len();
                let width = self.spec.width;
                let mut h: Vec<Var> = (0..layers.len()).map(|_| g.constant(Tensor::zeros([b, width]))).collect();
                let mut c = h.clone();
                for t in 0..STEPS {
                    let mut x = g.constant(batch.at_step(t));
                    for (li, l) in layers.iter().enumerate() {
                        let mut pre = [x; 4];
                        for (k, slot) in pre.iter_mut().enumerate() {
                            let from_x = g.dense(x, bound.get(l.x[k]), Some(bound.get(l.b[k])))?;
                            let from_h = g.dense(h[li], bound.get(l.h[k]), None)?;
                            *slot = g.add(from_x, from_h)?;
                        }
                        let i = g.sigmoid(pre[0]);
                        let o = g.sigmoid(pre[1]);
                        let f = g.sigmoid(pre[2]);
                        let cand = g.tanh(pre[3]);
                        let write = g.mul(i, cand)?;
                        let keep = g.mul(f, c[li])?;
                        c[li] = g.add(write, keep)?;
                        let tc = g.tanh(c[li]);
                        h[li] = g.mul(o, tc)?;
                        x = h[li];
                    }
                }
                h[layers.len() - 1]
            }
        })
    }

    /// Evaluation-mode predictions `[B, 6]`.
    pub fn predict(&self, batch: &SolarBatch<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &bound, batch, Mode::Eval)?;
        Ok(g.value(out).clone())
    }
}

/// Repeats the last observed value over the horizon.
pub fn persistence_power(past_power: &[f64]) -> [f64; STEPS] {
    [past_power.last().copied().unwrap_or(0.0); STEPS]
}
