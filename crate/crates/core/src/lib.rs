//! Communication-cost modelling, configuration search and verification for
//! DNN training that mixes batch, model and domain parallelism on a
//! `p_r x p_c` process grid.
//!
//! The crate is split into five layers:
//!
//! * [`netspec`] describes networks and derives per-layer dimensions.
//! * [`costmodel`] evaluates the alpha-beta communication formulas.
//! * [`planner`] enumerates process grids and ranks them by epoch time.
//! * [`simgrid`] is a deterministic message-passing fabric with a traffic ledger.
//! * [`exec15d`] runs the distributed matrix kernels on that fabric and
//!   reconciles the measured traffic with the analytic model.

pub mod costmodel;
pub mod error;
pub mod exec15d;
pub mod netspec;
pub mod planner;
pub mod simgrid;

pub use error::{Error, Result};
