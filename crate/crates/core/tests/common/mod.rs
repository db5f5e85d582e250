#![allow(dead_code)]

use std::f64::consts::PI;

use mwdnn::optics::GridSpec;
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

pub fn random_field<R: Rng>(rng: &mut R, n: usize) -> Array2<Complex64> {
    Array2::from_shape_simple_fn((n, n), || {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

pub fn random_real<R: Rng>(rng: &mut R, n: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, n), || rng.random::<f64>())
}

/// ⟨a, b⟩ = Σ conj(a)·b
pub fn inner(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn inner_real(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn power(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

pub fn rel_l2(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den = power(b).max(1e-300);
    (num / den).sqrt()
}

fn freq(i: usize, g: usize, pitch: f64) -> f64 {
    let k = if 2 * i < g { i as f64 } else { i as f64 - g as f64 };
    k / (g as f64 * pitch)
}

/// exp(i·2π·z·√(1/λ² − f²)) on bin (ky, kx), zero where evanescent.
pub fn transfer(ky: usize, kx: usize, grid: &GridSpec, lambda: f64, z: f64) -> Complex64 {
    let g = grid.padded_side();
    let fy = freq(ky, g, grid.pitch());
    let fx = freq(kx, g, grid.pitch());
    let arg = 1.0 / (lambda * lambda) - fx * fx - fy * fy;
    if arg < 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::from_polar(1.0, 2.0 * PI * z * arg.sqrt())
    }
}

fn dft2(input: &Array2<Complex64>, sign: f64) -> Array2<Complex64> {
    let g = input.nrows();
    let tw: Vec<Complex64> = (0..g)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / g as f64))
        .collect();
    let mut out = Array2::zeros((g, g));
    for ky in 0..g {
        for kx in 0..g {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..g {
                for x in 0..g {
                    acc += input[[y, x]] * tw[(ky * y + kx * x) % g];
                }
            }
            out[[ky, kx]] = acc;
        }
    }
    out
}

/// Direct O(G⁴) evaluation of the padded angular-spectrum sum, no FFT.
pub fn direct_propagate_padded(
    padded: &Array2<Complex64>,
    grid: &GridSpec,
    lambda: f64,
    z: f64,
) -> Array2<Complex64> {
    let g = grid.padded_side();
    let mut spec = dft2(padded, -1.0);
    for ky in 0..g {
        for kx in 0..g {
            spec[[ky, kx]] *= transfer(ky, kx, grid, lambda, z);
        }
    }
    dft2(&spec, 1.0).mapv(|v| v / (g * g) as f64)
}

pub fn embed(window: &Array2<Complex64>, grid: &GridSpec) -> Array2<Complex64> {
    let g = grid.padded_side();
    let k = grid.side();
    let o = grid.window_offset();
    let mut out = Array2::zeros((g, g));
    out.slice_mut(ndarray::s![o..o + k, o..o + k]).assign(window);
    out
}

pub fn direct_propagate(
    window: &Array2<Complex64>,
    grid: &GridSpec,
    lambda: f64,
    z: f64,
) -> Array2<Complex64> {
    let full = direct_propagate_padded(&embed(window, grid), grid, lambda, z);
    let k = grid.side();
    let o = grid.window_offset();
    full.slice(ndarray::s![o..o + k, o..o + k]).to_owned()
}

/// Random field whose spectrum on the padded grid is confined to
/// |f| < `cutoff`·(1/λ).
pub fn band_limited_padded<R: Rng>(
    rng: &mut R,
    grid: &GridSpec,
    lambda: f64,
    cutoff: f64,
) -> Array2<Complex64> {
    let g = grid.padded_side();
    let limit = cutoff / lambda;
    let mut spec = Array2::zeros((g, g));
    for ky in 0..g {
        for kx in 0..g {
            let fy = freq(ky, g, grid.pitch());
            let fx = freq(kx, g, grid.pitch());
            if (fx * fx + fy * fy).sqrt() < limit {
                spec[[ky, kx]] =
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
    }
    dft2(&spec, 1.0).mapv(|v| v / (g * g) as f64)
}

pub fn data_dir() -> std::path::PathBuf {
    match std::env::var_os("MWDNN_DATA_DIR") {
        Some(d) => d.into(),
        None => std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}
