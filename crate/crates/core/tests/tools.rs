use std::f64::consts::{PI, TAU};
use std::fs;

use mwdnn::optics::{GridSpec, PhaseStack, SystemGeometry};
use mwdnn::tools::{
    apply_override, export_heights, export_phase, import_phase, latency, optical_metrics, read_raw,
    solve_doe_heights, write_raw, RawKind, RunConfig, SPEED_OF_LIGHT,
};
use mwdnn::Error;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pixel_cost(h: f64, phi: f64, wl: &[f64], n: &[f64]) -> f64 {
    wl.iter()
        .zip(n)
        .map(|(&l, &k)| {
            let mut d = (TAU * (k - 1.0) * h / l - phi) % TAU;
            if d > PI {
                d -= TAU;
            } else if d <= -PI {
                d += TAU;
            }
            d * d
        })
        .sum()
}

/// Independent exhaustive scan: every rung's (order, height, cost), best first
/// (lowest order among equal costs).
fn scan(phi: f64, wl: &[f64], n: &[f64], max_order: usize) -> Vec<(usize, f64, f64)> {
    let phi = phi.rem_euclid(TAU);
    let mut rungs: Vec<_> = (0..=max_order)
        .map(|m| {
            let h = (phi + TAU * m as f64) * wl[0] / (TAU * (n[0] - 1.0));
            (m, h, pixel_cost(h, phi, wl, n))
        })
        .collect();
    rungs.sort_by(|a, b| a.2.total_cmp(&b.2));
    // lowest order among costs equal up to rounding goes first
    let best = rungs[0].2;
    let first = (0..rungs.len())
        .filter(|&i| rungs[i].2 <= best + 1e-12)
        .min_by_key(|&i| rungs[i].0)
        .unwrap();
    rungs.swap(0, first);
    rungs
}

fn random_phases(rng: &mut ChaCha8Rng, side: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((side, side), || rng.random_range(0.0..TAU))
}

#[test]
fn doe_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cases: [(&[f64], &[f64], usize); 4] = [
        (&[400e-9, 600e-9], &[1.5, 1.5], 10),
        (&[600e-9, 400e-9], &[1.5, 1.5], 6),
        (&[700e-9, 550e-9, 400e-9], &[1.46, 1.47, 1.48], 12),
        (&[633e-9], &[1.7], 3),
    ];
    for (wl, n, max_order) in cases {
        let target = random_phases(&mut rng, 12);
        let map = solve_doe_heights(&target, wl, n, max_order).unwrap();
        let mut sq = vec![0.0; wl.len()];
        for ((idx, &phi), &h) in target.indexed_iter().zip(&map.heights) {
            let rungs = scan(phi, wl, n, max_order);
            let best = rungs[0].2;
            let got = pixel_cost(h, phi.rem_euclid(TAU), wl, n);
            assert!(got <= best + 1e-12, "{got} vs {best}");
            let m = map.orders[idx];
            assert!((h - rungs.iter().find(|r| r.0 == m).unwrap().1).abs() <= 1e-21);
            // a strict minimum must be found exactly
            if rungs.len() == 1 || rungs[1].2 > best + 1e-9 {
                assert_eq!(m, rungs[0].0);
            }
            assert!(h >= 0.0);
            for (i, (&l, &k)) in wl.iter().zip(n).enumerate() {
                let d = (TAU * (k - 1.0) * h / l - phi).rem_euclid(TAU);
                let d = d.min(TAU - d);
                sq[i] += d * d;
            }
        }
        for (i, s) in sq.iter().enumerate() {
            let rms = (s / target.len() as f64).sqrt();
            assert!((rms - map.residual_rms[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn doe_pi_at_400_and_600() {
    let target = Array2::from_elem((2, 2), PI);
    let wl = [400e-9, 600e-9];
    let map = solve_doe_heights(&target, &wl, &[1.5, 1.5], 10).unwrap();
    let rungs = scan(PI, &wl, &[1.5, 1.5], 10);
    for &h in &map.heights {
        assert!(pixel_cost(h, PI, &wl, &[1.5, 1.5]) <= rungs[0].2 + 1e-12);
    }
    // 600 nm sees (1+2m)·2π/3: every rung except m ≡ 1 (mod 3) is π/3 off
    assert_eq!(rungs[0].0, 0);
    assert!(map.orders.iter().all(|&o| o == 0));
    assert!((map.residual_rms[1] - PI / 3.0).abs() < 1e-12);
    // at 400 nm the ladder is exact
    assert!(map.residual_rms[0] < 1e-12);
}

#[test]
fn doe_exact_common_height_has_zero_residual() {
    // λ₁(n₂−1)/(λ₂(n₁−1)) = 3, so φ ∈ {0, π} is met exactly by every rung
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let target = Array2::from_shape_simple_fn((16, 16), || if rng.random::<bool>() { PI } else { 0.0 });
    let map = solve_doe_heights(&target, &[600e-9, 400e-9], &[1.5, 2.0], 5).unwrap();
    assert!(map.residual_rms.iter().all(|&r| r <= 1e-12), "{:?}", map.residual_rms);
    assert!(map.orders.iter().all(|&o| o == 0));
    for (&phi, &h) in target.iter().zip(&map.heights) {
        let expected = if phi == 0.0 { 0.0 } else { 600e-9 };
        assert!((h - expected).abs() < 1e-21);
    }
}

#[test]
fn phase_export_roundtrip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut stack = PhaseStack::random_uniform(3, 9, &mut rng);
    // out-of-range values are wrapped on export
    stack.layers_mut()[1][[0, 0]] = -1.0;
    stack.layers_mut()[2][[4, 4]] = 3.0 * TAU + 0.25;
    let files = export_phase(&stack, dir.path()).unwrap();
    assert_eq!(files.len(), 6);
    let back = import_phase(dir.path()).unwrap();
    assert_eq!(back.layer_count(), 3);
    for (a, b) in stack.wrapped().iter().zip(back.layers()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-15);
            assert!((0.0..TAU).contains(y));
        }
    }

    let pgm = fs::read(dir.path().join("layer_0.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n9 9\n255\n"));
    assert_eq!(pgm.len(), b"P5\n9 9\n255\n".len() + 81);
}

#[test]
fn import_rejects_missing_or_wrong_kind() {
    let dir = tempfile::tempdir().unwrap();
    assert!(import_phase(dir.path()).is_err());
    write_raw(dir.path().join("layer_0.raw"), RawKind::Height, &Array2::zeros((4, 4))).unwrap();
    assert!(matches!(import_phase(dir.path()), Err(Error::BadPhaseFile { .. })));
}

#[test]
fn heights_export_uses_raw_format() {
    let dir = tempfile::tempdir().unwrap();
    let target = random_phases(&mut ChaCha8Rng::seed_from_u64(1), 6);
    let map = solve_doe_heights(&target, &[700e-9, 400e-9], &[1.5, 1.5], 8).unwrap();
    export_heights(std::slice::from_ref(&map), dir.path()).unwrap();
    let (kind, h) = read_raw(dir.path().join("heights_0.raw")).unwrap();
    assert_eq!(kind, RawKind::Height);
    assert_eq!(h, map.heights);
    assert!(dir.path().join("heights_0.pgm").exists());
}

#[test]
fn config_overrides_and_echo() {
    let text = r#"
[geometry]
wavelengths_nm = [700.0, 400.0]
side = 16
layers = 2

[layout]
categories = 4
"#;
    let cfg = RunConfig::from_toml_str(
        text,
        &["train.epochs=7".into(), "geometry.pitch_um=2.5".into(), "run.out_dir=somewhere".into()],
    )
    .unwrap();
    assert_eq!(cfg.train.epochs, 7);
    assert_eq!(cfg.geometry.pitch_um, 2.5);
    assert_eq!(cfg.run.out_dir, std::path::PathBuf::from("somewhere"));

    let resolved = cfg.resolved().unwrap();
    assert!(resolved.geometry.spacing_mm.is_some());
    assert!(resolved.train.logit_scale.is_some());
    let again = RunConfig::from_toml_str(&resolved.to_toml(), &[]).unwrap();
    assert_eq!(again, resolved);
    assert_eq!(again.resolved().unwrap(), resolved);

    assert!(matches!(
        RunConfig::from_toml_str(text, &["train.epochz=1".into()]),
        Err(Error::Config(_))
    ));
    assert!(RunConfig::from_toml_str("[geometry]\nside = \"x\"", &[]).is_err());
    assert!(RunConfig::from_toml_str(text, &["geometry.wavelengths_nm=[700]".into()]).is_ok());
    assert!(RunConfig::from_toml_str(
        text,
        &["geometry.wavelengths_nm=[700]".into(), "layout.tasks=2".into()]
    )
    .is_err());

    let mut doc = toml::Table::new();
    apply_override(&mut doc, "train.filter=wavelength-selective").unwrap();
    assert_eq!(doc["train"]["filter"].as_str(), Some("wavelength-selective"));
    assert!(apply_override(&mut doc, "nodot=1").is_err());
    assert!(apply_override(&mut doc, "train.epochs").is_err());
}

#[test]
fn latency_is_path_over_c_plus_readout() {
    assert!((latency(0.0, 30e9).unwrap() - 1.0 / 30e9).abs() < 1e-24);
    let t = latency(0.3, 30e9).unwrap();
    assert!((t - (0.3 / 2.998e8 + 1.0 / 30e9)).abs() < 1e-12);
    assert!(latency(1.0, 0.0).is_err());

    let grid = GridSpec::new(40, 4e-6, 2).unwrap();
    let geo = SystemGeometry::new(vec![700e-9, 400e-9], grid, 2, vec![0.01, 0.02, 0.03]).unwrap();
    let m = optical_metrics(&geo, 30e9).unwrap();
    assert!((m.path_length - 0.06).abs() < 1e-15);
    assert!((m.latency - (0.06 / SPEED_OF_LIGHT + 1.0 / 30e9)).abs() < 1e-24);
    assert_eq!(m.element_count, 2 * 40 * 40);
    assert_eq!(m.channel_count, 2);

    let other = SystemGeometry::new(vec![500e-9], GridSpec::new(8, 4e-6, 2).unwrap(), 2, vec![0.01, 0.02, 0.03])
        .unwrap();
    assert_eq!(optical_metrics(&other, 30e9).unwrap().latency, m.latency);
}
