// SPDX-License-Identifier: MIT OR Apache-2.0

//! sLSTM backbone with hand-written reverse-mode gradients.

pub mod block;
pub mod ops;
pub mod slstm;

pub use block::{
    backbone_backward, backbone_forward, backbone_forward_cached, block_backward, block_forward,
    block_forward_cached, BackboneCache, BlockCache, BlockParams, FeedForwardParams, TensorRef,
};
pub use ops::{gelu, rmsnorm, RMS_EPS};
pub use slstm::{
    slstm_layer_backward, slstm_layer_forward, slstm_layer_forward_cached, slstm_step, slstm_step_unstabilized,
    SLstmCache, SLstmLayerParams, SLstmState,
};
