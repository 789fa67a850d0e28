//! Simulation, learned receivers and classical baselines for uplink grant-free NOMA.

// `!(x > 0.0)` is used on purpose so that NaN fails every positivity check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod io;
pub mod nn;
pub mod picnet;
pub mod prep;
pub mod rng;
pub mod sysmodel;
pub mod trainer;

pub use config::{Constellation, Scheme, SystemConfig, TrainConfig};
pub use error::{Error, Result};
