//! Executes the 1.5D forward and backward multiplications and height-split
//! convolutions on [`SimGrid`](crate::simgrid::SimGrid), with sequential
//! references and reconciliation of the measured traffic.

mod dist;
mod domain;
mod matrix;
mod network;
mod reconcile;

pub use dist::{backward_data, backward_weights, forward, redistribute_to_grid, sgd_step, DistMatrix, Layout};
pub use domain::{
    conv2d_backward_data, conv2d_backward_weights, conv2d_same, domain_conv_backward_data,
    domain_conv_backward_weights, domain_conv_forward, domain_conv_forward_cached, ConvKernel, DomainForward,
    DomainImage, Tensor4,
};
pub use matrix::Matrix;
pub use network::{
    conv_instance, fc_distributed, fc_distributed_loss, fc_gradient_check, fc_instance, fc_reference, simulate,
    FcPass, SimNet, SimRun,
};
pub use reconcile::{reconcile, reconcile_rows, EntryKey, ReconcileEntry, ReconcileReport};
