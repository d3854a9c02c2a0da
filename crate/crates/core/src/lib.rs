//! Budgeted behavior-based online incentives for crowd sensing.

// `!(x > 0.0)` style guards reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bidding;
pub mod coverage;
pub mod mechanism;
pub mod scenario;
pub mod threshold;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
