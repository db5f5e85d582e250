use std::f64::consts::PI;

use ndarray::{s, Array2};
use num_complex::Complex64;

use super::fft::Fft2;
use super::field::ComplexField;
use super::grid::GridSpec;
use crate::error::{Error, Result};

/// Band-limited angular-spectrum transfer function for one (λ, z) pair on
/// the padded grid. Propagating frequencies get exp(i·2πz·√(1/λ² − f²));
/// evanescent ones are dropped.
#[derive(Debug, Clone)]
pub struct PropagationKernel {
    factors: Vec<Complex64>,
    wavelength: f64,
    distance: f64,
    grid: GridSpec,
    fft: Fft2,
}

impl PropagationKernel {
    pub fn new(grid: GridSpec, wavelength: f64, distance: f64) -> Result<Self> {
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(Error::InvalidArgument(format!("wavelength {wavelength}")));
        }
        if !(distance >= 0.0) || !distance.is_finite() {
            return Err(Error::InvalidArgument(format!("distance {distance}")));
        }
        let g = grid.padded_side();
        let inv_l2 = 1.0 / (wavelength * wavelength);
        let freqs: Vec<f64> = (0..g).map(|i| grid.frequency(i)).collect();
        let mut factors = Vec::with_capacity(g * g);
        for fy in &freqs {
            for fx in &freqs {
                let arg = inv_l2 - fx * fx - fy * fy;
                factors.push(if arg >= 0.0 {
                    Complex64::from_polar(1.0, 2.0 * PI * distance * arg.sqrt())
                } else {
                    Complex64::new(0.0, 0.0)
                });
            }
        }
        Ok(Self {
            factors,
            wavelength,
            distance,
            grid,
            fft: Fft2::new(g),
        })
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Transfer function at FFT bins (ky, kx).
    pub fn factor(&self, ky: usize, kx: usize) -> Complex64 {
        self.factors[ky * self.grid.padded_side() + kx]
    }

    pub fn spectral_factors(&self) -> Array2<Complex64> {
        let g = self.grid.padded_side();
        Array2::from_shape_vec((g, g), self.factors.clone()).expect("g*g factors")
    }

    /// Kernel of the conjugate-transpose operator.
    pub fn adjoint(&self) -> Self {
        Self {
            factors: self.factors.iter().map(|f| f.conj()).collect(),
            ..self.clone()
        }
    }

    fn check(&self, field: &ComplexField) -> Result<()> {
        if field.grid() != &self.grid {
            return Err(Error::shape(
                format!("{:?}", self.grid),
                format!("{:?}", field.grid()),
            ));
        }
        if field.wavelength() != self.wavelength {
            return Err(Error::WavelengthMismatch {
                field: field.wavelength(),
                kernel: self.wavelength,
            });
        }
        Ok(())
    }

    fn apply_window(&self, window: &Array2<Complex64>, conjugate: bool) -> Array2<Complex64> {
        let g = self.grid.padded_side();
        let k = self.grid.side();
        let o = self.grid.window_offset();
        let mut buf = vec![Complex64::new(0.0, 0.0); g * g];
        for (r, row) in window.rows().into_iter().enumerate() {
            let start = (o + r) * g + o;
            for (dst, src) in buf[start..start + k].iter_mut().zip(row) {
                *dst = *src;
            }
        }
        let mut scratch = Vec::with_capacity(g * g);
        self.fft.forward(&mut buf, &mut scratch, o..o + k);
        self.multiply(&mut buf, conjugate);
        self.fft.inverse(&mut buf, &mut scratch, o..o + k);
        let norm = 1.0 / (g * g) as f64;
        Array2::from_shape_fn((k, k), |(r, c)| buf[(o + r) * g + o + c] * norm)
    }

    fn apply_padded(&self, padded: &Array2<Complex64>, conjugate: bool) -> Array2<Complex64> {
        let g = self.grid.padded_side();
        let mut buf: Vec<Complex64> = padded.iter().copied().collect();
        let mut scratch = Vec::with_capacity(g * g);
        self.fft.forward(&mut buf, &mut scratch, 0..g);
        self.multiply(&mut buf, conjugate);
        self.fft.inverse(&mut buf, &mut scratch, 0..g);
        let norm = 1.0 / (g * g) as f64;
        Array2::from_shape_vec((g, g), buf.into_iter().map(|z| z * norm).collect())
            .expect("g*g buffer")
    }

    fn multiply(&self, spectrum: &mut [Complex64], conjugate: bool) {
        // Symmetric in (kx, ky), so the transposed spectrum layout is fine.
        if conjugate {
            for (s, h) in spectrum.iter_mut().zip(&self.factors) {
                *s *= h.conj();
            }
        } else {
            for (s, h) in spectrum.iter_mut().zip(&self.factors) {
                *s *= h;
            }
        }
    }
}

/// Free-space propagation of a windowed field: zero-pad, filter the
/// spectrum with the transfer function, crop back to the K×K window.
pub fn propagate(field: &ComplexField, kernel: &PropagationKernel) -> Result<ComplexField> {
    kernel.check(field)?;
    let out = kernel.apply_window(field.amplitudes(), false);
    Ok(ComplexField::from_parts_unchecked(
        out,
        field.wavelength(),
        *field.grid(),
    ))
}

/// Conjugate transpose of [`propagate`] (pad ↔ crop swap roles, factors
/// conjugated).
pub fn adjoint_propagate(
    cotangent: &ComplexField,
    kernel: &PropagationKernel,
) -> Result<ComplexField> {
    kernel.check(cotangent)?;
    let out = kernel.apply_window(cotangent.amplitudes(), true);
    Ok(ComplexField::from_parts_unchecked(
        out,
        cotangent.wavelength(),
        *cotangent.grid(),
    ))
}

/// Propagation on the full G×G plane without cropping (circular
/// convolution); used where nothing may leave the computational window.
pub fn propagate_padded(
    padded: &Array2<Complex64>,
    kernel: &PropagationKernel,
) -> Result<Array2<Complex64>> {
    let g = kernel.grid.padded_side();
    if padded.dim() != (g, g) {
        return Err(Error::shape(format!("{g}x{g}"), format!("{:?}", padded.dim())));
    }
    Ok(kernel.apply_padded(padded, false))
}

pub fn adjoint_propagate_padded(
    padded: &Array2<Complex64>,
    kernel: &PropagationKernel,
) -> Result<Array2<Complex64>> {
    let g = kernel.grid.padded_side();
    if padded.dim() != (g, g) {
        return Err(Error::shape(format!("{g}x{g}"), format!("{:?}", padded.dim())));
    }
    Ok(kernel.apply_padded(padded, true))
}

/// Crop the K×K working window out of a padded plane.
pub fn crop_window(padded: &Array2<Complex64>, grid: &GridSpec) -> Array2<Complex64> {
    let k = grid.side();
    let o = grid.window_offset();
    padded.slice(s![o..o + k, o..o + k]).to_owned()
}
