use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling of one diffractive plane: `side × side` elements at `pitch`
/// meters, zero-padded to `pad_factor · side` before every propagation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    side: usize,
    pitch: f64,
    pad_factor: usize,
}

impl GridSpec {
    pub fn new(side: usize, pitch: f64, pad_factor: usize) -> Result<Self> {
        if side < 2 {
            return Err(Error::InvalidGrid(format!("side must be >= 2, got {side}")));
        }
        if !(pitch > 0.0) || !pitch.is_finite() {
            return Err(Error::InvalidGrid(format!("pitch must be positive, got {pitch}")));
        }
        if pad_factor < 1 {
            return Err(Error::InvalidGrid("pad factor must be >= 1".into()));
        }
        Ok(Self {
            side,
            pitch,
            pad_factor,
        })
    }

    /// Working window side K.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn pad_factor(&self) -> usize {
        self.pad_factor
    }

    /// Padded side G = pad_factor · K.
    pub fn padded_side(&self) -> usize {
        self.pad_factor * self.side
    }

    /// Physical aperture K · pitch in meters.
    pub fn aperture(&self) -> f64 {
        self.side as f64 * self.pitch
    }

    /// Spatial-frequency sampling step 1/(G · pitch) in cycles per meter.
    pub fn frequency_step(&self) -> f64 {
        1.0 / (self.padded_side() as f64 * self.pitch)
    }

    /// Row/column of the working window's first element inside the padded
    /// grid. Odd remainders leave the extra padding at the bottom/right.
    pub fn window_offset(&self) -> usize {
        (self.padded_side() - self.side) / 2
    }

    /// Signed frequency of FFT bin `index` on the padded grid.
    pub fn frequency(&self, index: usize) -> f64 {
        let g = self.padded_side();
        let signed = if index < g.div_ceil(2) {
            index as f64
        } else {
            index as f64 - g as f64
        };
        signed * self.frequency_step()
    }
}

/// Wavelength channels, plane sampling and the L+1 free-space gaps of the
/// stack (input → layer 1, between layers, last layer → detector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemGeometry {
    wavelengths: Vec<f64>,
    grid: GridSpec,
    layer_count: usize,
    distances: Vec<f64>,
}

impl SystemGeometry {
    pub fn new(
        wavelengths: Vec<f64>,
        grid: GridSpec,
        layer_count: usize,
        distances: Vec<f64>,
    ) -> Result<Self> {
        if wavelengths.is_empty() {
            return Err(Error::InvalidGeometry("at least one wavelength required".into()));
        }
        if wavelengths.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidGeometry("wavelengths must be positive".into()));
        }
        for (i, a) in wavelengths.iter().enumerate() {
            if wavelengths[i + 1..].contains(a) {
                return Err(Error::InvalidGeometry(format!("duplicate wavelength {a}")));
            }
        }
        if distances.len() != layer_count + 1 {
            return Err(Error::InvalidGeometry(format!(
                "{} layers need {} distances, got {}",
                layer_count,
                layer_count + 1,
                distances.len()
            )));
        }
        if distances.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidGeometry("distances must be positive".into()));
        }
        Ok(Self {
            wavelengths,
            grid,
            layer_count,
            distances,
        })
    }

    /// Every gap set to `spacing`, or to [`layer_spacing`] when `None`.
    pub fn uniform(
        wavelengths: Vec<f64>,
        grid: GridSpec,
        layer_count: usize,
        spacing: Option<f64>,
    ) -> Result<Self> {
        let d = match spacing {
            Some(d) => d,
            None => layer_spacing(&wavelengths, &grid)?,
        };
        Self::new(wavelengths, grid, layer_count, vec![d; layer_count + 1])
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn channel_count(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn total_path(&self) -> f64 {
        self.distances.iter().sum()
    }
}

/// Plane spacing from the maximum half-cone diffraction angle of one
/// element, θ = asin(λ/2Δ), so that a layer edge illuminates the whole
/// next layer: d = K·Δ / (2 tan θ). Uses the shortest wavelength, whose
/// cone is narrowest.
pub fn layer_spacing(wavelengths: &[f64], grid: &GridSpec) -> Result<f64> {
    let lambda = wavelengths
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidGeometry("no valid wavelength".into()));
    }
    let sin = lambda / (2.0 * grid.pitch());
    if sin >= 1.0 {
        return Err(Error::InvalidGeometry(format!(
            "wavelength {lambda} m >= 2 x pitch {} m, diffraction angle undefined",
            grid.pitch()
        )));
    }
    let theta = sin.asin();
    Ok(grid.aperture() / (2.0 * theta.tan()))
}
