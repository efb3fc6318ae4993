//! UAV base station support for a damaged cellular network: radio and
//! traffic simulation, KPI extraction, and a DQN positioning controller.

// Config validation uses `!(x > 0.0)` on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod channel;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod rlenv;
pub mod rng;
pub mod traffic;

pub use error::{Error, Result};
