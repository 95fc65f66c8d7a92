use crate::autodiff::{Graph, Padding, Var};
use crate::error::{Result, TensorError};
use crate::params::{Bound, Initializer, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::CellState;

/// Gate order used everywhere: input, output, forget, candidate.
pub const GATES: [&str; 4] = ["i", "o", "f", "c"];

/// Kernels of one gate: hidden-to-gate, input-to-gate and the gate bias.
#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub w_h: ParamId,
    pub w_x: ParamId,
    pub bias: ParamId,
}

/// Parameters of a ConvLSTM cell. All eight kernels share `kernel`.
#[derive(Clone, Debug)]
pub struct ConvLstmParams {
    pub input: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub gates: [GateParams; 4],
}

impl ConvLstmParams {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        init: &mut Initializer,
        prefix: &str,
        input: usize,
        hidden: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) || hidden == 0 || input == 0 {
            return Err(TensorError::invalid(
                "convlstm",
                format!("need odd kernel and positive channels, got k={kernel} in={input} hidden={hidden}"),
            ));
        }
        let mut gate = |name: &str| -> Result<GateParams> {
            Ok(GateParams {
                w_h: params.add(
                    format!("{prefix}.w_{name}h"),
                    init.kernel(&[hidden, hidden, kernel, kernel]),
                )?,
                w_x: params.add(
                    format!("{prefix}.w_{name}x"),
                    init.kernel(&[hidden, input, kernel, kernel]),
                )?,
                bias: params.add(format!("{prefix}.b_{name}"), Tensor::zeros([hidden]))?,
            })
        };
        let gates = [gate(GATES[0])?, gate(GATES[1])?, gate(GATES[2])?, gate(GATES[3])?];
        Ok(ConvLstmParams {
            input,
            hidden,
            kernel,
            gates,
        })
    }

    pub(crate) fn check_inputs<T: Scalar>(&self, g: &Graph<T>, x: Var, state: &CellState) -> Result<()> {
        let (sx, sh) = (g.shape(x), g.shape(state.h));
        if sx.len() != 3 || sx[0] != self.input {
            return Err(TensorError::shape(
                "convlstm_step",
                format!("input {sx:?} does not have {} channels", self.input),
            ));
        }
        if sh != [self.hidden, sx[1], sx[2]] || g.shape(state.c) != sh {
            return Err(TensorError::shape(
                "convlstm_step",
                format!("state {sh:?} incompatible with input {sx:?}"),
            ));
        }
        Ok(())
    }
}

/// Which convolution term of a gate pre-activation is being produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Hidden,
    Input,
}

/// Shared ConvLSTM update. `refine` post-processes each of the eight
/// convolution results before they are summed; the plain cell passes them
/// through unchanged.
pub(crate) fn lstm_update<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &ConvLstmParams,
    x: Var,
    state: &CellState,
    mut refine: impl FnMut(&mut Graph<T>, usize, Branch, Var) -> Result<Var>,
) -> Result<(Var, Var)> {
    p.check_inputs(g, x, state)?;
    let mut pre = Vec::with_capacity(4);
    for (gi, gate) in p.gates.iter().enumerate() {
        let from_h = g.conv2d(state.h, bound.get(gate.w_h), None, Padding::Same)?;
        let from_h = refine(g, gi, Branch::Hidden, from_h)?;
        let from_x = g.conv2d(x, bound.get(gate.w_x), None, Padding::Same)?;
        let from_x = refine(g, gi, Branch::Input, from_x)?;
        let sum = g.add(from_h, from_x)?;
        pre.push(g.channel_bias(sum, bound.get(gate.bias))?);
    }
    let i = g.sigmoid(pre[0]);
    let o = g.sigmoid(pre[1]);
    let f = g.sigmoid(pre[2]);
    let cand = g.tanh(pre[3]);
    let write = g.mul(i, cand)?;
    let keep = g.mul(f, state.c)?;
    let c = g.add(write, keep)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// One ConvLSTM step:
/// `i,o,f = σ(W_·h * h + W_·x * x + b_·)`, `C = i ⊙ tanh(W_ch * h + W_cx * x + b_c) + f ⊙ C_prev`,
/// `h = o ⊙ tanh(C)`.
pub fn convlstm_step<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &ConvLstmParams,
    x: Var,
    state: &CellState,
) -> Result<CellState> {
    let (h, c) = lstm_update(g, bound, p, x, state, |_, _, _, v| Ok(v))?;
    Ok(CellState { h, c, m: state.m })
}
