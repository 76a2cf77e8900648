//! Simulation and analysis of a frequency-multiplexed cavity-SPDC source
//! feeding an atomic frequency comb memory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod engine;
pub mod error;
pub mod io;
pub mod memory;
pub mod spectral;
pub mod time;

pub use error::{Error, Result};
