//! Simulation and prior-initialized Bayesian reconstruction of high-density
//! fluorescence time series, plus the quality metrics used to judge them.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! command line and tile-level parallelism live in the `fluoroforge` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod imaging;
pub mod inference;
pub mod metrics;
pub mod photophysics;
pub mod simulator;
pub mod tiling;

pub use error::{Error, Result};
pub use imaging::{FrameStack, Image};
pub use photophysics::{CalibrationProfile, FluorophoreState};
