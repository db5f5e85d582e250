//! Scalar-diffraction forward model: angular-spectrum free-space
//! propagation between parallel planes and phase-only modulation layers,
//! composed per wavelength channel.

mod fft;
mod field;
mod grid;
mod network;
mod propagation;

pub use field::{relative_l2, ComplexField};
pub use grid::{layer_spacing, GridSpec, SystemGeometry};
pub use network::{apply_phase, total_intensity, wrap_phase, Diffractive, ForwardOutput, PhaseStack};
pub use propagation::{
    adjoint_propagate, adjoint_propagate_padded, crop_window, propagate, propagate_padded,
    PropagationKernel,
};
