//! Height maps that realize one phase profile at several wavelengths.
//!
//! A pixel of height h delays wavelength λ by 2π(n(λ)−1)h/λ. Adding whole
//! multiples of 2π to the first wavelength's phase gives a ladder of
//! candidate heights; the solver keeps the rung whose phase at every other
//! wavelength lands closest (modulo 2π) to the target.

use std::f64::consts::{PI, TAU};

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    /// Physical thickness per pixel in meters.
    pub heights: Array2<f64>,
    pub wavelengths: Vec<f64>,
    pub refractive_index: Vec<f64>,
    /// RMS wrapped phase error per wavelength, radians.
    pub residual_rms: Vec<f64>,
    /// Chosen 2π order per pixel.
    pub orders: Array2<usize>,
}

/// Difference folded into (−π, π].
pub fn wrapped_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Phase delay of a pixel of height `h` at wavelength `lambda`.
pub fn phase_delay(h: f64, lambda: f64, n: f64) -> f64 {
    TAU * (n - 1.0) * h / lambda
}

/// Height giving phase `phi + 2πm` at the first wavelength.
pub fn candidate_height(phi: f64, order: usize, lambda: f64, n: f64) -> f64 {
    (phi + TAU * order as f64) * lambda / (TAU * (n - 1.0))
}

fn cost(h: f64, phi: f64, wavelengths: &[f64], index: &[f64]) -> f64 {
    wavelengths
        .iter()
        .zip(index)
        .map(|(&l, &n)| wrapped_difference(phase_delay(h, l, n), phi).powi(2))
        .sum()
}

/// Costs closer than this count as equal, so rounding cannot pick a
/// thicker pixel over an equally good thinner one.
const TIE: f64 = 1e-12;

/// Per-pixel order search for `target` (wrapped to [0, 2π) first).
/// Ties go to the lowest order, i.e. the thinnest pixel.
pub fn solve_doe_heights(
    target: &Array2<f64>,
    wavelengths: &[f64],
    refractive_index: &[f64],
    max_order: usize,
) -> Result<HeightMap> {
    if wavelengths.is_empty() {
        return Err(Error::Empty("wavelength list".into()));
    }
    if refractive_index.len() != wavelengths.len() {
        return Err(Error::shape(wavelengths.len(), refractive_index.len()));
    }
    if wavelengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument("wavelengths must be positive".into()));
    }
    if refractive_index.iter().any(|&n| !(n > 1.0) || !n.is_finite()) {
        return Err(Error::InvalidArgument("refractive index must exceed 1".into()));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target phase".into()));
    }
    let (l0, n0) = (wavelengths[0], refractive_index[0]);
    let mut heights = Array2::zeros(target.dim());
    let mut orders = Array2::zeros(target.dim());
    Zip::from(&mut heights)
        .and(&mut orders)
        .and(target)
        .for_each(|h, m, &phi| {
            let phi = phi.rem_euclid(TAU);
            let mut best = (f64::INFINITY, 0, 0.0);
            for order in 0..=max_order {
                let cand = candidate_height(phi, order, l0, n0);
                let c = cost(cand, phi, wavelengths, refractive_index);
                if c < best.0 - TIE {
                    best = (c, order, cand);
                }
            }
            *m = best.1;
            *h = best.2;
        });

    let count = target.len().max(1) as f64;
    let residual_rms = wavelengths
        .iter()
        .zip(refractive_index)
        .map(|(&l, &n)| {
            let sq: f64 = Zip::from(&heights).and(target).fold(0.0, |acc, &h, &phi| {
                acc + wrapped_difference(phase_delay(h, l, n), phi).powi(2)
            });
            (sq / count).sqrt()
        })
        .collect();

    Ok(HeightMap {
        heights,
        wavelengths: wavelengths.to_vec(),
        refractive_index: refractive_index.to_vec(),
        residual_rms,
        orders,
    })
}
