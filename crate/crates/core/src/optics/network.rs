use std::f64::consts::TAU;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::Rng;

use super::field::ComplexField;
use super::grid::SystemGeometry;
use super::propagation::{propagate, PropagationKernel};
use crate::error::{Error, Result};

/// Trainable phase maps of the L diffractive layers, shared by every
/// wavelength channel. Values are unconstrained radians; the applied
/// modulation is exp(iθ).
///
/// `version` changes on every mutation so gradient tapes recorded against
/// an older state can be detected.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStack {
    layers: Vec<Array2<f64>>,
    side: usize,
    version: u64,
}

impl PhaseStack {
    pub fn zeros(layer_count: usize, side: usize) -> Self {
        Self {
            layers: (0..layer_count).map(|_| Array2::zeros((side, side))).collect(),
            side,
            version: 0,
        }
    }

    /// Independent uniform draws in [0, 2π).
    pub fn random_uniform<R: Rng + ?Sized>(layer_count: usize, side: usize, rng: &mut R) -> Self {
        Self {
            layers: (0..layer_count)
                .map(|_| Array2::from_shape_fn((side, side), |_| rng.random_range(0.0..TAU)))
                .collect(),
            side,
            version: 0,
        }
    }

    pub fn from_layers(layers: Vec<Array2<f64>>) -> Result<Self> {
        let side = layers.first().map(|l| l.nrows()).unwrap_or(0);
        for l in &layers {
            if l.dim() != (side, side) {
                return Err(Error::shape(format!("{side}x{side}"), format!("{:?}", l.dim())));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("phase layer".into()));
            }
        }
        Ok(Self {
            layers,
            side,
            version: 0,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &Array2<f64> {
        &self.layers[index]
    }

    pub fn layers_mut(&mut self) -> &mut [Array2<f64>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.len() * self.side * self.side
    }

    /// Phases folded into [0, 2π).
    pub fn wrapped(&self) -> Vec<Array2<f64>> {
        self.layers.iter().map(|l| l.mapv(wrap_phase)).collect()
    }
}

pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Phase-only modulation u'(p) = u(p)·exp(iθ(p)).
pub fn apply_phase(field: &ComplexField, layer: &Array2<f64>) -> Result<ComplexField> {
    if layer.dim() != field.amplitudes().dim() {
        return Err(Error::shape(
            format!("{:?}", field.amplitudes().dim()),
            format!("{:?}", layer.dim()),
        ));
    }
    let mut out = field.amplitudes().clone();
    Zip::from(&mut out)
        .and(layer)
        .for_each(|u, &t| *u *= Complex64::from_polar(1.0, t));
    Ok(ComplexField::from_parts_unchecked(
        out,
        field.wavelength(),
        *field.grid(),
    ))
}

/// Output fields and detector intensities of every channel.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub fields: Vec<ComplexField>,
    pub intensities: Vec<Array2<f64>>,
}

/// A stack of phase layers in a fixed geometry, with the transfer
/// functions of every gap precomputed per wavelength channel.
#[derive(Debug, Clone)]
pub struct Diffractive {
    geometry: SystemGeometry,
    // kernels[channel][gap]
    kernels: Vec<Vec<PropagationKernel>>,
}

impl Diffractive {
    pub fn new(geometry: SystemGeometry) -> Result<Self> {
        let mut kernels = Vec::with_capacity(geometry.channel_count());
        for &w in geometry.wavelengths() {
            let mut per_gap: Vec<PropagationKernel> = Vec::new();
            for &d in geometry.distances() {
                let k = match per_gap.iter().find(|k| k.distance() == d) {
                    Some(k) => k.clone(),
                    None => PropagationKernel::new(*geometry.grid(), w, d)?,
                };
                per_gap.push(k);
            }
            kernels.push(per_gap);
        }
        Ok(Self { geometry, kernels })
    }

    pub fn geometry(&self) -> &SystemGeometry {
        &self.geometry
    }

    pub fn kernels(&self, channel: usize) -> &[PropagationKernel] {
        &self.kernels[channel]
    }

    pub(crate) fn check_inputs(&self, inputs: &[ComplexField], phases: &PhaseStack) -> Result<()> {
        if inputs.len() != self.geometry.channel_count() {
            return Err(Error::ChannelMismatch {
                expected: self.geometry.channel_count(),
                actual: inputs.len(),
            });
        }
        for (f, &w) in inputs.iter().zip(self.geometry.wavelengths()) {
            if f.wavelength() != w {
                return Err(Error::WavelengthMismatch {
                    field: f.wavelength(),
                    kernel: w,
                });
            }
            if f.grid() != self.geometry.grid() {
                return Err(Error::shape(
                    format!("{:?}", self.geometry.grid()),
                    format!("{:?}", f.grid()),
                ));
            }
        }
        if phases.layer_count() != self.geometry.layer_count()
            || (phases.layer_count() > 0 && phases.side() != self.geometry.grid().side())
        {
            return Err(Error::shape(
                format!(
                    "{} layers of {}",
                    self.geometry.layer_count(),
                    self.geometry.grid().side()
                ),
                format!("{} layers of {}", phases.layer_count(), phases.side()),
            ));
        }
        Ok(())
    }

    /// Runs one channel, calling `record` with each post-modulation field.
    pub(crate) fn run_channel(
        &self,
        channel: usize,
        input: &ComplexField,
        phases: &PhaseStack,
        mut record: impl FnMut(&ComplexField),
    ) -> Result<ComplexField> {
        let kernels = &self.kernels[channel];
        let mut u = input.clone();
        for (layer, kernel) in phases.layers().iter().zip(kernels) {
            u = apply_phase(&propagate(&u, kernel)?, layer)?;
            record(&u);
        }
        propagate(&u, &kernels[phases.layer_count()])
    }

    /// Applies M_i(Φ) to each channel input and squares the result. Channels
    /// never interact.
    pub fn forward(&self, inputs: &[ComplexField], phases: &PhaseStack) -> Result<ForwardOutput> {
        self.check_inputs(inputs, phases)?;
        let mut fields = Vec::with_capacity(inputs.len());
        let mut intensities = Vec::with_capacity(inputs.len());
        for (c, input) in inputs.iter().enumerate() {
            let out = self.run_channel(c, input, phases, |_| {})?;
            intensities.push(out.intensity());
            fields.push(out);
        }
        Ok(ForwardOutput {
            fields,
            intensities,
        })
    }
}

/// Pixelwise Σ_i I_i over wavelength channels.
pub fn total_intensity(intensities: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = intensities
        .first()
        .ok_or_else(|| Error::Empty("no intensity maps".into()))?;
    let mut total = first.clone();
    for m in &intensities[1..] {
        if m.dim() != total.dim() {
            return Err(Error::shape(format!("{:?}", total.dim()), format!("{:?}", m.dim())));
        }
        total += m;
    }
    Ok(total)
}
