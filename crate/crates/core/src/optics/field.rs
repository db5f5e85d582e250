use ndarray::Array2;
use num_complex::Complex64;

use super::grid::GridSpec;
use crate::error::{Error, Result};

/// Complex scalar field on the K×K working window at one wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    amplitudes: Array2<Complex64>,
    wavelength: f64,
    grid: GridSpec,
}

impl ComplexField {
    pub fn new(amplitudes: Array2<Complex64>, wavelength: f64, grid: GridSpec) -> Result<Self> {
        let k = grid.side();
        if amplitudes.dim() != (k, k) {
            return Err(Error::shape(
                format!("{k}x{k}"),
                format!("{}x{}", amplitudes.nrows(), amplitudes.ncols()),
            ));
        }
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("field amplitudes".into()));
        }
        if !(wavelength > 0.0) {
            return Err(Error::InvalidArgument(format!("wavelength {wavelength}")));
        }
        Ok(Self {
            amplitudes,
            wavelength,
            grid,
        })
    }

    pub fn zeros(wavelength: f64, grid: GridSpec) -> Self {
        let k = grid.side();
        Self {
            amplitudes: Array2::zeros((k, k)),
            wavelength,
            grid,
        }
    }

    /// Real, zero-phase field from an amplitude map.
    pub fn from_real(amplitude: &Array2<f64>, wavelength: f64, grid: GridSpec) -> Result<Self> {
        Self::new(amplitude.mapv(|a| Complex64::new(a, 0.0)), wavelength, grid)
    }

    pub(crate) fn from_parts_unchecked(
        amplitudes: Array2<Complex64>,
        wavelength: f64,
        grid: GridSpec,
    ) -> Self {
        Self {
            amplitudes,
            wavelength,
            grid,
        }
    }

    pub fn amplitudes(&self) -> &Array2<Complex64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Array2<Complex64> {
        self.amplitudes
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.amplitudes.mapv(|z| z.norm_sqr())
    }

    pub fn power(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            amplitudes: self.amplitudes.mapv(|z| z * c),
            wavelength: self.wavelength,
            grid: self.grid,
        }
    }

    /// The field embedded in the zero-padded G×G plane.
    pub fn padded(&self) -> Array2<Complex64> {
        let g = self.grid.padded_side();
        let k = self.grid.side();
        let o = self.grid.window_offset();
        let mut out = Array2::zeros((g, g));
        out.slice_mut(ndarray::s![o..o + k, o..o + k])
            .assign(&self.amplitudes);
        out
    }
}

/// Relative L2 distance ‖a − b‖ / ‖b‖ (absolute when `b` is zero).
pub fn relative_l2(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let norm: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    }
}
