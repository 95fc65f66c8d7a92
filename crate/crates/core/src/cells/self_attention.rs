use crate::autodiff::{Graph, Padding, Var};
use crate::error::{Result, TensorError};
use crate::params::{Bound, Initializer, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::convlstm::{convlstm_step, ConvLstmParams};
use super::CellState;

/// A 1x1 convolution with bias.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Projection {
    fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        init: &mut Initializer,
        name: &str,
        from: usize,
        to: usize,
    ) -> Result<Self> {
        Ok(Projection {
            weight: params.add(format!("{name}_w"), init.kernel(&[to, from, 1, 1]))?,
            bias: params.add(format!("{name}_b"), Tensor::zeros([to]))?,
        })
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, bound: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, bound.get(self.weight), Some(bound.get(self.bias)), Padding::Same)
    }
}

/// Self-attention memory module: projections for the hidden and memory
/// branches, the aggregation mix and the memory gates.
#[derive(Clone, Debug)]
pub struct SaMemoryParams {
    pub hidden: usize,
    pub kernel: usize,
    /// Shared query/key width `d`.
    pub attention_dim: usize,
    pub query_h: Projection,
    pub key_h: Projection,
    pub value_h: Projection,
    pub key_m: Projection,
    pub value_m: Projection,
    /// `2C -> C` mix of the concatenated branch outputs.
    pub mix: Projection,
    pub w_ih: ParamId,
    pub w_iz: ParamId,
    pub b_i: ParamId,
    pub w_oh: ParamId,
    pub w_oz: ParamId,
    pub b_o: ParamId,
    pub w_mh: ParamId,
    pub w_mz: ParamId,
    pub b_m: ParamId,
}

impl SaMemoryParams {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        init: &mut Initializer,
        prefix: &str,
        hidden: usize,
        kernel: usize,
        attention_dim: usize,
    ) -> Result<Self> {
        if hidden == 0 || attention_dim == 0 || kernel.is_multiple_of(2) {
            return Err(TensorError::invalid(
                "sa_memory",
                format!("hidden={hidden} d={attention_dim} kernel={kernel}"),
            ));
        }
        let c = hidden;
        let d = attention_dim;
        let mut proj = |name: &str, from, to| Projection::register(params, init, &format!("{prefix}.{name}"), from, to);
        let query_h = proj("q_h", c, d)?;
        let key_h = proj("k_h", c, d)?;
        let value_h = proj("v_h", c, c)?;
        let key_m = proj("k_m", c, d)?;
        let value_m = proj("v_m", c, c)?;
        let mix = proj("mix", 2 * c, c)?;
        let mut conv = |name: &str| params.add(format!("{prefix}.{name}"), init.kernel(&[c, c, kernel, kernel]));
        let (w_ih, w_iz) = (conv("w_ih")?, conv("w_iz")?);
        let (w_oh, w_oz) = (conv("w_oh")?, conv("w_oz")?);
        let (w_mh, w_mz) = (conv("w_mh")?, conv("w_mz")?);
        let mut bias = |name: &str| params.add(format!("{prefix}.{name}"), Tensor::zeros([c]));
        let (b_i, b_o, b_m) = (bias("b_i")?, bias("b_o")?, bias("b_m")?);
        Ok(SaMemoryParams {
            hidden,
            kernel,
            attention_dim,
            query_h,
            key_h,
            value_h,
            key_m,
            value_m,
            mix,
            w_ih,
            w_iz,
            b_i,
            w_oh,
            w_oz,
            b_o,
            w_mh,
            w_mz,
            b_m,
        })
    }
}

/// Result of [`self_attention_aggregate`].
#[derive(Clone, Copy, Debug)]
pub struct Aggregation {
    /// `[N, N]` over flattened pixels; row `i` holds query pixel `i`'s weights over keys.
    pub weights_h: Var,
    pub weights_m: Var,
    /// `[C, H, W]`
    pub z: Var,
}

/// `softmax(Qᵀ K / sqrt(d))` as `[N_query, N_key]`, then `V · Aᵀ` as `[C, N]`.
fn attend<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var, d: usize) -> Result<(Var, Var)> {
    let qt = g.transpose(q)?;
    let scores = g.matmul(qt, k)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = g.softmax(scores, 1)?;
    let wt = g.transpose(weights)?;
    Ok((weights, g.matmul(v, wt)?))
}

pub fn self_attention_aggregate<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &SaMemoryParams,
    h: Var,
    m_prev: Var,
) -> Result<Aggregation> {
    let shape = g.shape(h).to_vec();
    if shape.len() != 3 || shape[0] != p.hidden || g.shape(m_prev) != shape.as_slice() {
        return Err(TensorError::shape(
            "self_attention_aggregate",
            format!("h {shape:?} vs memory {:?}", g.shape(m_prev)),
        ));
    }
    let (c, n, d) = (shape[0], shape[1] * shape[2], p.attention_dim);
    let flat = |g: &mut Graph<T>, proj: &Projection, x: Var, rows: usize| -> Result<Var> {
        let y = proj.apply(g, bound, x)?;
        g.reshape(y, [rows, n])
    };
    let q = flat(g, &p.query_h, h, d)?;
    let k_h = flat(g, &p.key_h, h, d)?;
    let v_h = flat(g, &p.value_h, h, c)?;
    let k_m = flat(g, &p.key_m, m_prev, d)?;
    let v_m = flat(g, &p.value_m, m_prev, c)?;
    let (weights_h, z_h) = attend(g, q, k_h, v_h, d)?;
    let (weights_m, z_m) = attend(g, q, k_m, v_m, d)?;
    let both = g.concat(&[z_h, z_m])?;
    let both = g.reshape(both, [2 * c, shape[1], shape[2]])?;
    let z = p.mix.apply(g, bound, both)?;
    Ok(Aggregation {
        weights_h,
        weights_m,
        z,
    })
}

/// Memory update on top of an already computed hidden map `h`.
pub fn sa_memory_update<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &SaMemoryParams,
    h: Var,
    m_prev: Var,
) -> Result<(Var, Var)> {
    let z = self_attention_aggregate(g, bound, p, h, m_prev)?.z;
    let gate = |g: &mut Graph<T>, wh: ParamId, wz: ParamId, b: ParamId| -> Result<Var> {
        let a = g.conv2d(h, bound.get(wh), None, Padding::Same)?;
        let bz = g.conv2d(z, bound.get(wz), None, Padding::Same)?;
        let s = g.add(a, bz)?;
        g.channel_bias(s, bound.get(b))
    };
    let i_pre = gate(g, p.w_ih, p.w_iz, p.b_i)?;
    let o_pre = gate(g, p.w_oh, p.w_oz, p.b_o)?;
    let m_pre = gate(g, p.w_mh, p.w_mz, p.b_m)?;
    let i = g.sigmoid(i_pre);
    let o = g.sigmoid(o_pre);
    let cand = g.tanh(m_pre);
    let write = g.mul(i, cand)?;
    let forget = g.one_minus(i);
    let keep = g.mul(forget, m_prev)?;
    let m = g.add(write, keep)?;
    let tm = g.tanh(m);
    let h_hat = g.mul(o, tm)?;
    Ok((h_hat, m))
}

#[derive(Clone, Debug)]
pub struct SaConvLstmParams {
    pub base: ConvLstmParams,
    pub memory: SaMemoryParams,
}

impl SaConvLstmParams {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        init: &mut Initializer,
        prefix: &str,
        input: usize,
        hidden: usize,
        kernel: usize,
        attention_dim: Option<usize>,
    ) -> Result<Self> {
        let base = ConvLstmParams::register(params, init, prefix, input, hidden, kernel)?;
        let d = attention_dim.unwrap_or((hidden / 2).max(1));
        let memory = SaMemoryParams::register(params, init, &format!("{prefix}.sam"), hidden, kernel, d)?;
        Ok(SaConvLstmParams { base, memory })
    }
}

pub fn sa_convlstm_step<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &SaConvLstmParams,
    x: Var,
    state: &CellState,
) -> Result<CellState> {
    let m_prev = state.m.ok_or_else(|| {
        TensorError::invalid("sa_convlstm_step", "state carries no attention memory")
    })?;
    let inner = convlstm_step(g, bound, &p.base, x, state)?;
    let (h, m) = sa_memory_update(g, bound, &p.memory, inner.h, m_prev)?;
    Ok(CellState {
        h,
        c: inner.c,
        m: Some(m),
    })
}
