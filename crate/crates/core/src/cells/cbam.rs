use crate::autodiff::{Graph, Padding, PoolMode, Var};
use crate::error::{Result, TensorError};
use crate::params::{Bound, Initializer, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::convlstm::{lstm_update, Branch, ConvLstmParams};
use super::CellState;

pub const DEFAULT_REDUCTION: usize = 4;
pub const DEFAULT_SPATIAL_KERNEL: usize = 7;

/// Channel attention (shared two-layer MLP) followed by spatial attention
/// (a `2 -> 1` convolution over channel-pooled maps).
#[derive(Clone, Debug)]
pub struct CbamParams {
    pub channels: usize,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
    pub spatial_w: ParamId,
    pub spatial_b: ParamId,
}

impl CbamParams {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        init: &mut Initializer,
        prefix: &str,
        channels: usize,
        reduction: usize,
        spatial_kernel: usize,
    ) -> Result<Self> {
        if channels == 0 || reduction == 0 || spatial_kernel.is_multiple_of(2) {
            return Err(TensorError::invalid(
                "cbam",
                format!("channels={channels} reduction={reduction} spatial_kernel={spatial_kernel}"),
            ));
        }
        let mid = (channels / reduction).max(1);
        Ok(CbamParams {
            channels,
            mlp_w1: params.add(format!("{prefix}.mlp_w1"), init.uniform(&[mid, channels], channels))?,
            mlp_b1: params.add(format!("{prefix}.mlp_b1"), Tensor::zeros([mid]))?,
            mlp_w2: params.add(format!("{prefix}.mlp_w2"), init.uniform(&[channels, mid], mid))?,
            mlp_b2: params.add(format!("{prefix}.mlp_b2"), Tensor::zeros([channels]))?,
            spatial_w: params.add(
                format!("{prefix}.spatial_w"),
                init.kernel(&[1, 2, spatial_kernel, spatial_kernel]),
            )?,
            spatial_b: params.add(format!("{prefix}.spatial_b"), Tensor::zeros([1]))?,
        })
    }

    fn mlp<T: Scalar>(&self, g: &mut Graph<T>, bound: &Bound, v: Var) -> Result<Var> {
        let hidden = g.dense(v, bound.get(self.mlp_w1), Some(bound.get(self.mlp_b1)))?;
        let hidden = g.relu(hidden);
        g.dense(hidden, bound.get(self.mlp_w2), Some(bound.get(self.mlp_b2)))
    }
}

/// Attention maps produced inside one [`cbam_with_maps`] call.
#[derive(Clone, Copy, Debug)]
pub struct CbamMaps {
    /// `[C]`
    pub channel: Var,
    /// `[1, H, W]`
    pub spatial: Var,
    pub output: Var,
}

pub fn cbam<T: Scalar>(g: &mut Graph<T>, bound: &Bound, p: &CbamParams, f: Var) -> Result<Var> {
    Ok(cbam_with_maps(g, bound, p, f)?.output)
}

pub fn cbam_with_maps<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &CbamParams,
    f: Var,
) -> Result<CbamMaps> {
    let shape = g.shape(f);
    if shape.len() != 3 || shape[0] != p.channels {
        return Err(TensorError::shape(
            "cbam",
            format!("feature map {shape:?} does not have {} channels", p.channels),
        ));
    }
    let avg = g.pool(f, PoolMode::GlobalAvgSpatial)?;
    let max = g.pool(f, PoolMode::GlobalMaxSpatial)?;
    let avg = p.mlp(g, bound, avg)?;
    let max = p.mlp(g, bound, max)?;
    let logits = g.add(avg, max)?;
    let channel = g.sigmoid(logits);
    let refined = g.scale_channels(f, channel)?;

    let avg = g.pool(refined, PoolMode::AvgOverChannels)?;
    let max = g.pool(refined, PoolMode::MaxOverChannels)?;
    let pooled = g.concat(&[avg, max])?;
    let logits = g.conv2d(
        pooled,
        bound.get(p.spatial_w),
        Some(bound.get(p.spatial_b)),
        Padding::Same,
    )?;
    let spatial = g.sigmoid(logits);
    let output = g.scale_pixels(refined, spatial)?;
    Ok(CbamMaps {
        channel,
        spatial,
        output,
    })
}

/// ConvLSTM whose eight convolution terms each pass through their own CBAM.
#[derive(Clone, Debug)]
pub struct CbamConvLstmParams {
    pub base: ConvLstmParams,
    /// Indexed `[gate][0 = hidden term, 1 = input term]`.
    pub attention: [[CbamParams; 2]; 4],
    /// Skips every CBAM so the cell degenerates to plain ConvLSTM.
    pub identity_attention: bool,
}

impl CbamConvLstmParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        init: &mut Initializer,
        prefix: &str,
        input: usize,
        hidden: usize,
        kernel: usize,
        reduction: usize,
        spatial_kernel: usize,
    ) -> Result<Self> {
        let base = ConvLstmParams::register(params, init, prefix, input, hidden, kernel)?;
        let mut make = |gate: &str, term: &str| {
            CbamParams::register(
                params,
                init,
                &format!("{prefix}.cbam_{gate}{term}"),
                hidden,
                reduction,
                spatial_kernel,
            )
        };
        let mut attention = Vec::with_capacity(4);
        for gate in super::convlstm::GATES {
            attention.push([make(gate, "h")?, make(gate, "x")?]);
        }
        let attention: [[CbamParams; 2]; 4] = attention.try_into().expect("four gates");
        Ok(CbamConvLstmParams {
            base,
            attention,
            identity_attention: false,
        })
    }
}

pub fn cbam_convlstm_step<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &CbamConvLstmParams,
    x: Var,
    state: &CellState,
) -> Result<CellState> {
    let (h, c) = lstm_update(g, bound, &p.base, x, state, |g, gate, branch, v| {
        if p.identity_attention {
            return Ok(v);
        }
        let term = match branch {
            Branch::Hidden => 0,
            Branch::Input => 1,
        };
        cbam(g, bound, &p.attention[gate][term], v)
    })?;
    Ok(CellState { h, c, m: state.m })
}
