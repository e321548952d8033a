//! Forward and adjoint kernels for every primitive the network uses.
//!
//! Kernels here are pure functions on [`Tensor`]s. The autodiff tape in
//! [`crate::autograd`] records which kernel produced each value and calls the
//! matching adjoint during the backward pass.

mod conv;
mod elementwise;
mod layout;
mod norm;
mod pool;

pub use conv::{conv2d, conv_output_extent, ConvGeom, PaddingMode, PaddingSpec};
pub use elementwise::{apply_activation, Activation};
pub use layout::{channel_shuffle, upsample_nearest};
pub use norm::instance_norm;
pub use pool::{directional_pool, PoolAxis, PoolKind};

pub(crate) use conv::{conv_backward, conv_forward, reflect_pad, reflect_pad_backward};
pub(crate) use elementwise::{
    activation_backward, broadcast_binary, broadcast_binary_backward, BinaryOp,
};
pub(crate) use layout::{
    concat, concat_backward, narrow, narrow_backward, shuffle_backward, softmax, softmax_backward,
    sum_axis, sum_axis_backward, unfold, unfold_backward, upsample_backward,
};
pub(crate) use norm::{instance_norm_backward, instance_norm_forward};
pub(crate) use pool::{directional_pool_backward, directional_pool_forward};

/// Splits a shape around `axis` into `(outer, len, inner)` element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
