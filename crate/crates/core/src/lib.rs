//! Simulation and training of multi-wavelength diffractive deep neural
//! networks: each task's input is encoded on its own wavelength, all
//! channels share one stack of phase-only layers, and the detector plane is
//! split into per-task sub-regions of every category area.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod grad;
pub mod optics;
pub mod readout;
pub mod tools;
pub mod training;

pub use error::{Error, Result};
