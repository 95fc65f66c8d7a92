//! Convolutional recurrent cells for cloud-image forecasting and the
//! stacked sequence model built from them.

mod cbam;
mod convlstm;
mod model;
mod self_attention;

pub use cbam::{
    cbam, cbam_convlstm_step, cbam_with_maps, CbamConvLstmParams, CbamMaps, CbamParams,
    DEFAULT_REDUCTION, DEFAULT_SPATIAL_KERNEL,
};
pub use convlstm::{convlstm_step, ConvLstmParams, GateParams, GATES};
pub use model::{CellKind, CloudArchitecture, CloudNet, LayerParams, NetState};
pub use self_attention::{
    sa_convlstm_step, sa_memory_update, self_attention_aggregate, Aggregation, Projection,
    SaConvLstmParams, SaMemoryParams,
};

use crate::autodiff::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Recurrent state of one layer. `m` is present only for self-attention cells.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    pub c: Var,
    pub m: Option<Var>,
}

impl CellState {
    /// All-zero state of `hidden` channels over an `height x width` grid.
    pub fn zeros<T: Scalar>(
        g: &mut Graph<T>,
        hidden: usize,
        height: usize,
        width: usize,
        with_memory: bool,
    ) -> Self {
        let shape = [hidden, height, width];
        CellState {
            h: g.constant(Tensor::zeros(shape)),
            c: g.constant(Tensor::zeros(shape)),
            m: with_memory.then(|| g.constant(Tensor::zeros(shape))),
        }
    }
}
