//! Raw and preview file formats.
//!
//! Raw layout, little-endian throughout:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 0..4  | `MWDN`                                    |
//! | 4     | format version (1)                        |
//! | 5     | kind: 0 = phase (rad), 1 = height (m)     |
//! | 6..8  | reserved, zero                            |
//! | 8..12 | K as u32                                  |
//! | 12..  | K·K f64, row-major                        |
//!
//! Previews are binary 8-bit PGM (P5).

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::optics::{wrap_phase, PhaseStack};
use crate::readout::DetectorLayout;
use crate::tools::doe::HeightMap;

pub const RAW_MAGIC: [u8; 4] = *b"MWDN";
pub const RAW_VERSION: u8 = 1;
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawKind {
    Phase,
    Height,
}

impl RawKind {
    fn code(self) -> u8 {
        match self {
            RawKind::Phase => 0,
            RawKind::Height => 1,
        }
    }
}

pub fn encode_raw(kind: RawKind, values: &Array2<f64>) -> Result<Vec<u8>> {
    let (r, c) = values.dim();
    if r != c {
        return Err(Error::shape(format!("{r}x{r}"), format!("{r}x{c}")));
    }
    let k = u32::try_from(r).map_err(|_| Error::InvalidArgument(format!("side {r} too large")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * r * c);
    out.extend_from_slice(&RAW_MAGIC);
    out.extend_from_slice(&[RAW_VERSION, kind.code(), 0, 0]);
    out.extend_from_slice(&k.to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<(RawKind, Array2<f64>)> {
    let bad = |reason: String| Error::BadPhaseFile {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if bytes[..4] != RAW_MAGIC {
        return Err(bad(format!("magic {:?}", &bytes[..4])));
    }
    if bytes[4] != RAW_VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let kind = match bytes[5] {
        0 => RawKind::Phase,
        1 => RawKind::Height,
        other => return Err(bad(format!("unknown kind {other}"))),
    };
    let k = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let want = HEADER_LEN + 8 * k * k;
    if bytes.len() != want {
        return Err(bad(format!("K={k} needs {want} bytes, found {}", bytes.len())));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let arr = Array2::from_shape_vec((k, k), values).expect("length checked");
    Ok((kind, arr))
}

pub fn write_raw(path: impl AsRef<Path>, kind: RawKind, values: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raw(kind, values)?).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<(RawKind, Array2<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, path)
}

/// Binary PGM of a row-major 8-bit image.
pub fn encode_pgm(pixels: &Array2<u8>) -> Vec<u8> {
    let (h, w) = pixels.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels.iter());
    out
}

pub fn write_pgm(path: impl AsRef<Path>, pixels: &Array2<u8>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(pixels)).map_err(|e| Error::io(path, e))
}

/// Gray level ⌊255·θ/2π⌋ of a phase wrapped into [0, 2π).
pub fn phase_gray(theta: f64) -> u8 {
    ((255.0 * wrap_phase(theta) / TAU).floor() as i64).clamp(0, 255) as u8
}

pub fn phase_preview(layer: &Array2<f64>) -> Array2<u8> {
    layer.mapv(phase_gray)
}

fn layer_name(index: usize, ext: &str) -> String {
    format!("layer_{index}.{ext}")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `layer_<i>.raw` (wrapped phases) and `layer_<i>.pgm` per layer.
pub fn export_phase(phases: &PhaseStack, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for (i, layer) in phases.wrapped().iter().enumerate() {
        let raw = dir.join(layer_name(i, "raw"));
        write_raw(&raw, RawKind::Phase, layer)?;
        let pgm = dir.join(layer_name(i, "pgm"));
        write_pgm(&pgm, &phase_preview(layer))?;
        written.push(raw);
        written.push(pgm);
    }
    Ok(written)
}

/// Reads `layer_0.raw`, `layer_1.raw`, … until the first missing index.
pub fn import_phase(dir: impl AsRef<Path>) -> Result<PhaseStack> {
    let dir = dir.as_ref();
    let mut layers = Vec::new();
    loop {
        let path = dir.join(layer_name(layers.len(), "raw"));
        if !path.exists() {
            break;
        }
        let (kind, values) = read_raw(&path)?;
        if kind != RawKind::Phase {
            return Err(Error::BadPhaseFile {
                path,
                reason: "height file where a phase file was expected".into(),
            });
        }
        layers.push(values);
    }
    if layers.is_empty() {
        return Err(Error::BadPhaseFile {
            path: dir.join(layer_name(0, "raw")),
            reason: "no phase layers found".into(),
        });
    }
    PhaseStack::from_layers(layers)
}

/// Writes `heights_<i>.raw` in meters and a preview scaled to the tallest
/// pixel of that layer.
pub fn export_heights(maps: &[HeightMap], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for (i, map) in maps.iter().enumerate() {
        let raw = dir.join(format!("heights_{i}.raw"));
        write_raw(&raw, RawKind::Height, &map.heights)?;
        let pgm = dir.join(format!("heights_{i}.pgm"));
        write_pgm(&pgm, &normalized_gray(&map.heights))?;
        written.push(raw);
        written.push(pgm);
    }
    Ok(written)
}

fn normalized_gray(values: &Array2<f64>) -> Array2<u8> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Array2::zeros(values.dim());
    }
    values.mapv(|v| ((255.0 * v.max(0.0) / max).round()) as u8)
}

/// Intensity scaled to its maximum, with every band outline drawn at 255
/// and category outlines at 160.
pub fn intensity_preview(intensity: &Array2<f64>, layout: Option<&DetectorLayout>) -> Array2<u8> {
    let mut img = normalized_gray(intensity);
    if let Some(layout) = layout {
        for j in 0..layout.category_count() {
            draw_outline(&mut img, layout.category_area(j), 160);
            for i in 0..layout.task_count() {
                draw_outline(&mut img, layout.band(j, i), 255);
            }
        }
    }
    img
}

fn draw_outline(img: &mut Array2<u8>, r: crate::readout::Rect, value: u8) {
    let (h, w) = img.dim();
    if r.height == 0 || r.width == 0 {
        return;
    }
    let bottom = (r.row + r.height - 1).min(h - 1);
    let right = (r.col + r.width - 1).min(w - 1);
    for c in r.col..=right {
        img[[r.row, c]] = value;
        img[[bottom, c]] = value;
    }
    for row in r.row..=bottom {
        img[[row, r.col]] = value;
        img[[row, right]] = value;
    }
}
