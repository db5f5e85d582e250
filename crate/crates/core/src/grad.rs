//! Reverse-mode differentiation through the diffractive stack.
//!
//! For a real loss of complex fields we carry the cotangent
//! ū = ∂L/∂Re(u) + i·∂L/∂Im(u). The three stages of a channel then have
//! explicit adjoints:
//!
//! * intensity `I = |u|²`: ū = 2·(∂L/∂I)·u
//! * propagation `u' = P u`: ū = Pᴴ ū'
//! * modulation `a = b·e^{iθ}`: ∂L/∂θ = Im(ā·conj(a)), b̄ = e^{-iθ}·ā
//!
//! Channels share Φ, so their phase gradients are summed.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::optics::{
    adjoint_propagate, ComplexField, Diffractive, ForwardOutput, PhaseStack,
};

/// Fields cached during one forward pass of one sample.
#[derive(Debug, Clone)]
pub struct GradientTape {
    phase_version: u64,
    layer_count: usize,
    channels: Vec<ChannelTape>,
}

#[derive(Debug, Clone)]
struct ChannelTape {
    // post-modulation field after each layer, in forward order
    modulated: Vec<ComplexField>,
    output: ComplexField,
}

impl GradientTape {
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Number of cached plane crossings per channel (L modulated planes plus
    /// the detector plane).
    pub fn planes_per_channel(&self) -> usize {
        self.layer_count + 1
    }
}

/// ∂L/∂Φ, shaped like the phase stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGradient {
    layers: Vec<Array2<f64>>,
}

impl PhaseGradient {
    pub fn zeros(layer_count: usize, side: usize) -> Self {
        Self {
            layers: (0..layer_count).map(|_| Array2::zeros((side, side))).collect(),
        }
    }

    pub fn zeros_like(phases: &PhaseStack) -> Self {
        Self::zeros(phases.layer_count(), phases.side())
    }

    pub fn from_layers(layers: Vec<Array2<f64>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.layers
    }

    pub fn add_assign(&mut self, other: &PhaseGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.mapv_inplace(|v| v * factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }

    pub fn get(&self, layer: usize, row: usize, col: usize) -> f64 {
        self.layers[layer][[row, col]]
    }
}

/// Forward pass that also records what [`backward`] needs.
pub fn forward_with_tape(
    network: &Diffractive,
    inputs: &[ComplexField],
    phases: &PhaseStack,
) -> Result<(ForwardOutput, GradientTape)> {
    network.check_inputs(inputs, phases)?;
    let mut channels = Vec::with_capacity(inputs.len());
    let mut fields = Vec::with_capacity(inputs.len());
    let mut intensities = Vec::with_capacity(inputs.len());
    for (c, input) in inputs.iter().enumerate() {
        let mut modulated = Vec::with_capacity(phases.layer_count());
        let out = network.run_channel(c, input, phases, |u| modulated.push(u.clone()))?;
        intensities.push(out.intensity());
        fields.push(out.clone());
        channels.push(ChannelTape {
            modulated,
            output: out,
        });
    }
    let tape = GradientTape {
        phase_version: phases.version(),
        layer_count: phases.layer_count(),
        channels,
    };
    Ok((
        ForwardOutput {
            fields,
            intensities,
        },
        tape,
    ))
}

fn check_tape(tape: &GradientTape, phases: &PhaseStack) -> Result<()> {
    if tape.phase_version != phases.version() {
        return Err(Error::StaleTape(format!(
            "tape recorded at phase version {}, stack is at {}",
            tape.phase_version,
            phases.version()
        )));
    }
    if tape.layer_count != phases.layer_count() {
        return Err(Error::StaleTape(format!(
            "tape has {} layers, stack has {}",
            tape.layer_count,
            phases.layer_count()
        )));
    }
    Ok(())
}

/// Gradient contribution of a single channel.
pub fn backward_channel(
    network: &Diffractive,
    tape: &GradientTape,
    phases: &PhaseStack,
    channel: usize,
    upstream: &Array2<f64>,
) -> Result<PhaseGradient> {
    check_tape(tape, phases)?;
    let ct = tape
        .channels
        .get(channel)
        .ok_or(Error::ChannelMismatch {
            expected: tape.channels.len(),
            actual: channel + 1,
        })?;
    let out = ct.output.amplitudes();
    if upstream.dim() != out.dim() {
        return Err(Error::shape(format!("{:?}", out.dim()), format!("{:?}", upstream.dim())));
    }
    let mut grad = PhaseGradient::zeros_like(phases);
    if upstream.iter().all(|&g| g == 0.0) {
        return Ok(grad);
    }
    let kernels = network.kernels(channel);
    let l = phases.layer_count();

    let mut cot = out.clone();
    Zip::from(&mut cot)
        .and(upstream)
        .for_each(|u, &g| *u *= 2.0 * g);
    let mut cot = ComplexField::new(cot, ct.output.wavelength(), *ct.output.grid())?;
    cot = adjoint_propagate(&cot, &kernels[l])?;

    for layer in (0..l).rev() {
        let a = ct.modulated[layer].amplitudes();
        let theta = phases.layer(layer);
        Zip::from(&mut grad.layers[layer])
            .and(cot.amplitudes())
            .and(a)
            .for_each(|g, ab, a| *g += (ab * a.conj()).im);
        if layer == 0 {
            break;
        }
        let mut b = cot.into_amplitudes();
        Zip::from(&mut b)
            .and(theta)
            .for_each(|z, &t| *z *= Complex64::from_polar(1.0, -t));
        let bf = ComplexField::new(b, ct.output.wavelength(), *ct.output.grid())?;
        cot = adjoint_propagate(&bf, &kernels[layer])?;
    }
    Ok(grad)
}

/// Chains ∂L/∂I_c for every channel back to ∂L/∂Φ.
pub fn backward(
    network: &Diffractive,
    tape: &GradientTape,
    phases: &PhaseStack,
    upstream: &[Array2<f64>],
) -> Result<PhaseGradient> {
    if upstream.len() != tape.channels.len() {
        return Err(Error::ChannelMismatch {
            expected: tape.channels.len(),
            actual: upstream.len(),
        });
    }
    let mut total = PhaseGradient::zeros_like(phases);
    for (c, g) in upstream.iter().enumerate() {
        total.add_assign(&backward_channel(network, tape, phases, c, g)?);
    }
    Ok(total)
}

/// One compared parameter of a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffSample {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub max_relative_error: f64,
    pub samples: Vec<FiniteDiffSample>,
}

/// Compares `analytic` against central differences of `loss` at
/// `sample_count` randomly chosen parameters. Entries where both values are
/// below `floor` in magnitude are compared but excluded from the maximum.
pub fn finite_diff_check<F, R>(
    mut loss: F,
    analytic: &PhaseGradient,
    phases: &PhaseStack,
    step: f64,
    sample_count: usize,
    floor: f64,
    rng: &mut R,
) -> Result<FiniteDiffReport>
where
    F: FnMut(&PhaseStack) -> Result<f64>,
    R: Rng + ?Sized,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let total = phases.parameter_count();
    if sample_count > total {
        return Err(Error::InvalidArgument(format!(
            "{sample_count} samples requested from {total} parameters"
        )));
    }
    let side = phases.side();
    let mut samples = Vec::with_capacity(sample_count);
    let mut worst: f64 = 0.0;
    let mut work = phases.clone();
    for flat in sample(rng, total, sample_count).into_iter() {
        let layer = flat / (side * side);
        let row = (flat / side) % side;
        let col = flat % side;
        let orig = phases.layer(layer)[[row, col]];

        work.layers_mut()[layer][[row, col]] = orig + step;
        let plus = loss(&work)?;
        work.layers_mut()[layer][[row, col]] = orig - step;
        let minus = loss(&work)?;
        work.layers_mut()[layer][[row, col]] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("loss during finite differences".into()));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.get(layer, row, col);
        let scale = a.abs().max(numeric.abs());
        if scale > floor {
            worst = worst.max((a - numeric).abs() / scale);
        }
        samples.push(FiniteDiffSample {
            layer,
            row,
            col,
            analytic: a,
            numeric,
        });
    }
    Ok(FiniteDiffReport {
        max_relative_error: worst,
        samples,
    })
}
