use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Padding, Var};
use crate::error::{Result, TensorError};
use crate::params::{Bound, Initializer, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::cbam::{cbam_convlstm_step, CbamConvLstmParams, DEFAULT_REDUCTION, DEFAULT_SPATIAL_KERNEL};
use super::convlstm::{convlstm_step, ConvLstmParams};
use super::self_attention::{sa_convlstm_step, SaConvLstmParams};
use super::CellState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Convlstm,
    Cbam,
    Sa,
    /// Parameter-free model that echoes its input frame. Rolling it out
    /// reproduces frame persistence.
    Identity,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Convlstm => "convlstm",
            CellKind::Cbam => "cbam",
            CellKind::Sa => "sa",
            CellKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "convlstm" => Some(CellKind::Convlstm),
            "cbam" => Some(CellKind::Cbam),
            "sa" => Some(CellKind::Sa),
            "identity" => Some(CellKind::Identity),
            _ => None,
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn one() -> usize {
    1
}

fn default_reduction() -> usize {
    DEFAULT_REDUCTION
}

fn default_spatial_kernel() -> usize {
    DEFAULT_SPATIAL_KERNEL
}

/// Architecture document stored beside each cloud-model checkpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudArchitecture {
    pub cell: CellKind,
    pub layers: usize,
    pub hidden: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub input_channels: usize,
    #[serde(default = "default_reduction")]
    pub cbam_reduction: usize,
    #[serde(default = "default_spatial_kernel")]
    pub cbam_spatial_kernel: usize,
    #[serde(default)]
    pub attention_dim: Option<usize>,
}

impl CloudArchitecture {
    pub fn new(cell: CellKind, layers: usize, hidden: usize, kernel: usize) -> Self {
        CloudArchitecture {
            cell,
            layers,
            hidden,
            kernel,
            input_channels: 1,
            cbam_reduction: DEFAULT_REDUCTION,
            cbam_spatial_kernel: DEFAULT_SPATIAL_KERNEL,
            attention_dim: None,
        }
    }

    pub fn identity() -> Self {
        CloudArchitecture::new(CellKind::Identity, 0, 0, 1)
    }
}

#[derive(Clone, Debug)]
pub enum LayerParams {
    ConvLstm(ConvLstmParams),
    Cbam(CbamConvLstmParams),
    SelfAttention(SaConvLstmParams),
}

impl LayerParams {
    fn hidden(&self) -> usize {
        match self {
            LayerParams::ConvLstm(p) => p.hidden,
            LayerParams::Cbam(p) => p.base.hidden,
            LayerParams::SelfAttention(p) => p.base.hidden,
        }
    }

    fn step<T: Scalar>(&self, g: &mut Graph<T>, bound: &Bound, x: Var, state: &CellState) -> Result<CellState> {
        match self {
            LayerParams::ConvLstm(p) => convlstm_step(g, bound, p, x, state),
            LayerParams::Cbam(p) => cbam_convlstm_step(g, bound, p, x, state),
            LayerParams::SelfAttention(p) => sa_convlstm_step(g, bound, p, x, state),
        }
    }
}

/// Recurrent state of a whole stack together with its parameter binding.
#[derive(Clone, Debug)]
pub struct NetState {
    pub bound: Bound,
    pub cells: Vec<CellState>,
}

/// Stacked recurrent cells followed by a 1x1 convolution head clamped to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct CloudNet<T> {
    arch: CloudArchitecture,
    params: ParamSet<T>,
    layers: Vec<LayerParams>,
    head: Option<(ParamId, ParamId)>,
}

impl<T: Scalar> CloudNet<T> {
    pub fn new(arch: CloudArchitecture, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let mut init = Initializer::new(seed);
        let mut layers = Vec::new();
        let mut head = None;
        if arch.cell != CellKind::Identity {
            if arch.layers == 0 || arch.hidden == 0 || arch.input_channels == 0 {
                return Err(TensorError::invalid(
                    "cloud_net",
                    format!("layers={} hidden={} must be positive", arch.layers, arch.hidden),
                ));
            }
            for l in 0..arch.layers {
                let input = if l == 0 { arch.input_channels } else { arch.hidden };
                let prefix = format!("layer{l}");
                let (h, k) = (arch.hidden, arch.kernel);
                layers.push(match arch.cell {
                    CellKind::Convlstm => LayerParams::ConvLstm(ConvLstmParams::register(
                        &mut params, &mut init, &prefix, input, h, k,
                    )?),
                    CellKind::Cbam => LayerParams::Cbam(CbamConvLstmParams::register(
                        &mut params,
                        &mut init,
                        &prefix,
                        input,
                        h,
                        k,
                        arch.cbam_reduction,
                        arch.cbam_spatial_kernel,
                    )?),
                    CellKind::Sa => LayerParams::SelfAttention(SaConvLstmParams::register(
                        &mut params,
                        &mut init,
                        &prefix,
                        input,
                        h,
                        k,
                        arch.attention_dim,
                    )?),
                    CellKind::Identity => unreachable!(),
                });
            }
            let w = params.add(
                "head.w",
                init.kernel(&[arch.input_channels, arch.hidden, 1, 1]),
            )?;
            let b = params.add("head.b", Tensor::zeros([arch.input_channels]))?;
            head = Some((w, b));
        }
        Ok(CloudNet {
            arch,
            params,
            layers,
            head,
        })
    }

    /// Rebuilds the layout of `arch` and fills it with checkpointed values.
    pub fn from_params(arch: CloudArchitecture, params: &ParamSet<T>) -> Result<Self> {
        let mut net = CloudNet::new(arch, 0)?;
        net.params.load_from(params)?;
        Ok(net)
    }

    pub fn architecture(&self) -> &CloudArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Forces every CBAM attention map to 1.
    pub fn set_identity_attention(&mut self, on: bool) {
        for layer in &mut self.layers {
            if let LayerParams::Cbam(p) = layer {
                p.identity_attention = on;
            }
        }
    }

    /// Binds parameters as trainable leaves and creates zero states.
    pub fn begin(&self, g: &mut Graph<T>, height: usize, width: usize) -> NetState {
        let bound = self.params.bind(g);
        self.begin_bound(g, bound, height, width)
    }

    /// Like [`CloudNet::begin`] but parameters enter the graph as constants.
    pub fn begin_frozen(&self, g: &mut Graph<T>, height: usize, width: usize) -> NetState {
        let bound = self.params.bind_frozen(g);
        self.begin_bound(g, bound, height, width)
    }

    /// Zero states over parameters already bound to `g`, e.g. by a training loop.
    pub fn begin_bound(&self, g: &mut Graph<T>, bound: Bound, height: usize, width: usize) -> NetState {
        let cells = self
            .layers
            .iter()
            .map(|l| {
                let memory = matches!(l, LayerParams::SelfAttention(_));
                CellState::zeros(g, l.hidden(), height, width, memory)
            })
            .collect();
        NetState { bound, cells }
    }

    /// Feeds one `[C, H, W]` frame and returns the predicted next frame.
    pub fn step(&self, g: &mut Graph<T>, state: &mut NetState, frame: Var) -> Result<Var> {
        let Some((hw, hb)) = self.head else {
            return Ok(frame);
        };
        let mut x = frame;
        for (layer, cell) in self.layers.iter().zip(state.cells.iter_mut()) {
            *cell = layer.step(g, &state.bound, x, cell)?;
            x = cell.h;
        }
        let y = g.conv2d(x, state.bound.get(hw), Some(state.bound.get(hb)), Padding::Same)?;
        Ok(g.clamp(y, 0.0, 1.0))
    }

    /// Warms the state on `inputs`, then predicts `horizon` frames, each fed
    /// back as the next input.
    pub fn rollout(&self, g: &mut Graph<T>, state: &mut NetState, inputs: &[Var], horizon: usize) -> Result<Vec<Var>> {
        if horizon < 1 {
            return Err(TensorError::invalid("rollout", "horizon must be at least 1"));
        }
        if inputs.is_empty() {
            return Err(TensorError::invalid("rollout", "no input frames"));
        }
        let mut pred = inputs[0];
        for &frame in inputs {
            pred = self.step(g, state, frame)?;
        }
        let mut out = vec![pred];
        while out.len() < horizon {
            pred = self.step(g, state, pred)?;
            out.push(pred);
        }
        Ok(out)
    }

    /// One-step predictions of every target frame given the true preceding
    /// frames: warms on `inputs`, then feeds `targets[..n-1]`.
    pub fn teacher_forced(
        &self,
        g: &mut Graph<T>,
        state: &mut NetState,
        inputs: &[Var],
        targets: &[Var],
    ) -> Result<Vec<Var>> {
        if inputs.is_empty() || targets.is_empty() {
            return Err(TensorError::invalid("teacher_forced", "empty input or target sequence"));
        }
        let mut pred = inputs[0];
        for &frame in inputs {
            pred = self.step(g, state, frame)?;
        }
        let mut out = vec![pred];
        for &frame in &targets[..targets.len() - 1] {
            out.push(self.step(g, state, frame)?);
        }
        Ok(out)
    }

    /// Inference-only rollout over `[C, H, W]` frames with values in `[0, 1]`.
    pub fn predict(&self, inputs: &[Tensor<T>], horizon: usize) -> Result<Vec<Tensor<T>>> {
        let (h, w) = frame_dims(inputs)?;
        let mut g = Graph::new();
        let mut state = self.begin_frozen(&mut g, h, w);
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = self.rollout(&mut g, &mut state, &vars, horizon)?;
        Ok(out.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Inference-only one-step predictions, see [`CloudNet::teacher_forced`].
    pub fn predict_teacher_forced(&self, inputs: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let (h, w) = frame_dims(inputs)?;
        let mut g = Graph::new();
        let mut state = self.begin_frozen(&mut g, h, w);
        let xs: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let ys: Vec<Var> = targets.iter().map(|t| g.constant(t.clone())).collect();
        let out = self.teacher_forced(&mut g, &mut state, &xs, &ys)?;
        Ok(out.into_iter().map(|v| g.value(v).clone()).collect())
    }
}

fn frame_dims<T: Scalar>(inputs: &[Tensor<T>]) -> Result<(usize, usize)> {
    let first = inputs
        .first()
        .ok_or_else(|| TensorError::invalid("rollout", "no input frames"))?;
    if first.rank() != 3 {
        return Err(TensorError::shape("rollout", format!("frame {:?} is not [C, H, W]", first.shape())));
    }
    for t in inputs {
        if t.data().iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(TensorError::invalid("rollout", "input frames must be normalized to [0, 1]"));
        }
    }
    Ok((first.shape()[1], first.shape()[2]))
}
