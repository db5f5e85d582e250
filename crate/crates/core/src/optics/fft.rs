//! Square 2-D FFT that skips the all-zero rows of a zero-padded window.
//!
//! Spectra are kept in transposed layout (`spec[kx * g + ky]`). The
//! propagation transfer function depends only on `fx² + fy²`, so it is
//! symmetric under that transpose and can be applied without undoing it.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct Fft2 {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2").field("size", &self.size).finish()
    }
}

impl Fft2 {
    pub(crate) fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    /// Unnormalized forward transform of a G×G buffer whose nonzero rows are
    /// `rows`. The result is written transposed into `buf`.
    pub(crate) fn forward(
        &self,
        buf: &mut Vec<Complex64>,
        scratch: &mut Vec<Complex64>,
        rows: std::ops::Range<usize>,
    ) {
        let g = self.size;
        debug_assert_eq!(buf.len(), g * g);
        if !rows.is_empty() {
            self.forward.process(&mut buf[rows.start * g..rows.end * g]);
        }
        transpose(buf, scratch, g);
        std::mem::swap(buf, scratch);
        self.forward.process(buf);
    }

    /// Unnormalized inverse of [`Fft2::forward`]: takes a transposed
    /// spectrum and leaves the spatial field in natural layout. Only rows in
    /// `rows` are fully transformed; the remaining rows hold partial results
    /// and must be ignored by the caller.
    pub(crate) fn inverse(
        &self,
        buf: &mut Vec<Complex64>,
        scratch: &mut Vec<Complex64>,
        rows: std::ops::Range<usize>,
    ) {
        let g = self.size;
        self.inverse.process(buf);
        transpose(buf, scratch, g);
        std::mem::swap(buf, scratch);
        if !rows.is_empty() {
            self.inverse.process(&mut buf[rows.start * g..rows.end * g]);
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut Vec<Complex64>, n: usize) {
    const BLOCK: usize = 32;
    dst.resize(n * n, Complex64::new(0.0, 0.0));
    for rb in (0..n).step_by(BLOCK) {
        for cb in (0..n).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(n) {
                for c in cb..(cb + BLOCK).min(n) {
                    dst[c * n + r] = src[r * n + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn matches_direct_dft() {
        let g = 6;
        let input: Vec<Complex64> = (0..g * g)
            .map(|i| {
                let r = i / g;
                if (2..4).contains(&r) {
                    Complex64::new((i as f64).sin(), (i as f64 * 0.7).cos())
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let fft = Fft2::new(g);
        let mut buf = input.clone();
        let mut scratch = Vec::new();
        fft.forward(&mut buf, &mut scratch, 2..4);
        for ky in 0..g {
            for kx in 0..g {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..g {
                    for x in 0..g {
                        let ph = -2.0 * PI * ((ky * y + kx * x) as f64) / g as f64;
                        acc += input[y * g + x] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((buf[kx * g + ky] - acc).norm() < 1e-10);
            }
        }
        fft.inverse(&mut buf, &mut scratch, 0..g);
        for (a, b) in buf.iter().zip(&input) {
            assert!((a / (g * g) as f64 - b).norm() < 1e-12);
        }
    }
}
