//! MNIST-family datasets: IDX parsing, class subsetting, amplitude encoding
//! and seeded per-task shuffling.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale images with class labels, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pixels: Vec<u8>,
    labels: Vec<usize>,
    rows: usize,
    cols: usize,
}

impl LabeledImageSet {
    pub fn new(pixels: Vec<u8>, labels: Vec<usize>, rows: usize, cols: usize) -> Result<Self> {
        let per = rows * cols;
        if per == 0 || !pixels.len().is_multiple_of(per) {
            return Err(Error::shape(format!("multiple of {per}"), pixels.len()));
        }
        let images = pixels.len() / per;
        if images != labels.len() {
            return Err(Error::CountMismatch {
                images,
                labels: labels.len(),
            });
        }
        Ok(Self {
            pixels,
            labels,
            rows,
            cols,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn image(&self, index: usize) -> &[u8] {
        let per = self.rows * self.cols;
        &self.pixels[index * per..(index + 1) * per]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Fails if any label is ≥ `classes`.
    pub fn validate_labels(&self, classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l >= classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }

    /// First `n` samples (all if `n ≥ len`).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * self.rows * self.cols].to_vec(),
            labels: self.labels[..n].to_vec(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    fn select(&self, indices: &[usize], relabel: impl Fn(usize) -> usize) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.rows * self.cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(relabel(self.labels[i]));
        }
        Self {
            pixels,
            labels,
            rows: self.rows,
            cols: self.cols,
        }
    }
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses one IDX buffer, returning its dimension sizes and payload.
fn parse_idx<'a>(bytes: &'a [u8], path: &Path, magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 4,
            actual: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic,
            found,
        });
    }
    // low byte of the magic is the dimension count
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndim).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::BadLength {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok((dims, &bytes[header..]))
}

/// Loads an IDX image/label file pair (optionally gzip-compressed).
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let (ip, lp) = (image_path.as_ref(), label_path.as_ref());
    let ib = read_maybe_gzip(ip)?;
    let lb = read_maybe_gzip(lp)?;
    let (idims, pixels) = parse_idx(&ib, ip, IDX_IMAGES_MAGIC)?;
    let (ldims, labels) = parse_idx(&lb, lp, IDX_LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(Error::CountMismatch {
            images: idims[0],
            labels: ldims[0],
        });
    }
    LabeledImageSet::new(
        pixels.to_vec(),
        labels.iter().map(|&l| l as usize).collect(),
        idims[1],
        idims[2],
    )
}

/// Writes an uncompressed IDX pair.
pub fn write_idx(set: &LabeledImageSet, image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<()> {
    let mut ib = Vec::with_capacity(16 + set.pixels.len());
    for v in [IDX_IMAGES_MAGIC, set.len() as u32, set.rows as u32, set.cols as u32] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    ib.extend_from_slice(&set.pixels);
    let mut lb = Vec::with_capacity(8 + set.len());
    for v in [IDX_LABELS_MAGIC, set.len() as u32] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    for &l in &set.labels {
        let b = u8::try_from(l).map_err(|_| Error::LabelOutOfRange { label: l, classes: 256 })?;
        lb.push(b);
    }
    fs::write(image_path.as_ref(), ib).map_err(|e| Error::io(image_path.as_ref(), e))?;
    fs::write(label_path.as_ref(), lb).map_err(|e| Error::io(label_path.as_ref(), e))?;
    Ok(())
}

/// Keeps only `classes`, relabelled 0.. in list order. With `cap`, a seeded
/// random subset of exactly `cap` samples is kept (original order).
pub fn subset_classes(
    set: &LabeledImageSet,
    classes: &[usize],
    cap: Option<usize>,
    seed: u64,
) -> Result<LabeledImageSet> {
    let present = set.classes();
    for c in classes {
        if !present.contains(c) {
            return Err(Error::ClassAbsent(*c));
        }
    }
    let mut indices: Vec<usize> = (0..set.len())
        .filter(|&i| classes.contains(&set.labels[i]))
        .collect();
    if let Some(cap) = cap {
        if indices.len() < cap {
            return Err(Error::InsufficientSamples {
                requested: cap,
                available: indices.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        indices.truncate(cap);
        indices.sort_unstable();
    }
    Ok(set.select(&indices, |l| {
        classes.iter().position(|&c| c == l).expect("filtered")
    }))
}

/// `count` distinct classes: the lowest labels present, or a seeded random
/// draw when `seed` is given.
pub fn pick_classes(set: &LabeledImageSet, count: usize, seed: Option<u64>) -> Result<Vec<usize>> {
    let mut present = set.classes();
    if present.len() < count {
        return Err(Error::InsufficientSamples {
            requested: count,
            available: present.len(),
        });
    }
    if let Some(seed) = seed {
        present.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        present.truncate(count);
        present.sort_unstable();
    } else {
        present.truncate(count);
    }
    Ok(present)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// One image encoded as a real input amplitude on the K×K window.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSample {
    pub field: Array2<f64>,
    pub label: usize,
    /// False for all-zero images, which cannot be scaled to unit power.
    pub normalized: bool,
}

fn resize(src: &[u8], rows: usize, cols: usize, out: usize, mode: Interpolation) -> Array2<f64> {
    let px = |r: usize, c: usize| src[r * cols + c] as f64 / 255.0;
    let sy = rows as f64 / out as f64;
    let sx = cols as f64 / out as f64;
    match mode {
        Interpolation::Nearest => Array2::from_shape_fn((out, out), |(r, c)| {
            let y = (((r as f64 + 0.5) * sy) as usize).min(rows - 1);
            let x = (((c as f64 + 0.5) * sx) as usize).min(cols - 1);
            px(y, x)
        }),
        // half-pixel centers, clamped at the border
        Interpolation::Bilinear => Array2::from_shape_fn((out, out), |(r, c)| {
            let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (rows - 1) as f64);
            let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (cols - 1) as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(rows - 1), (x0 + 1).min(cols - 1));
            let (ty, tx) = (y - y0 as f64, x - x0 as f64);
            let top = px(y0, x0) * (1.0 - tx) + px(y0, x1) * tx;
            let bottom = px(y1, x0) * (1.0 - tx) + px(y1, x1) * tx;
            top * (1.0 - ty) + bottom * ty
        }),
    }
}

/// Resize to ⌊K/2⌋ square, center in K×K (odd remainder padded at the
/// bottom/right), map gray 0..255 to amplitude 0..1 and scale to unit power.
pub fn preprocess(
    image: &[u8],
    rows: usize,
    cols: usize,
    label: usize,
    side: usize,
    mode: Interpolation,
) -> Result<AmplitudeSample> {
    if image.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::shape(rows * cols, image.len()));
    }
    let content = side / 2;
    if content == 0 {
        return Err(Error::InvalidArgument(format!("side {side} too small")));
    }
    let small = resize(image, rows, cols, content, mode);
    let off = (side - content) / 2;
    let mut field = Array2::zeros((side, side));
    field
        .slice_mut(ndarray::s![off..off + content, off..off + content])
        .assign(&small);
    let power: f64 = field.iter().map(|a| a * a).sum();
    let normalized = power > 0.0;
    if normalized {
        let s = power.sqrt().recip();
        field.mapv_inplace(|a| a * s);
    }
    Ok(AmplitudeSample {
        field,
        label,
        normalized,
    })
}

pub fn preprocess_index(
    set: &LabeledImageSet,
    index: usize,
    side: usize,
    mode: Interpolation,
) -> Result<AmplitudeSample> {
    preprocess(set.image(index), set.rows, set.cols, set.label(index), side, mode)
}

fn derive_seed(seed: u64, epoch: usize, task: usize) -> u64 {
    // splitmix64 over the packed triple
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (task as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded per-task permutations for one epoch, emitted as batches of
/// aligned N-tuples of sample indices. The epoch spans the largest set;
/// smaller sets cycle through their permutation again.
#[derive(Debug, Clone)]
pub struct BatchIter {
    perms: Vec<Vec<usize>>,
    batch: usize,
    length: usize,
    cursor: usize,
}

pub fn batch_iter(set_lengths: &[usize], batch: usize, seed: u64, epoch: usize) -> Result<BatchIter> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if set_lengths.is_empty() || set_lengths.contains(&0) {
        return Err(Error::Empty("dataset".into()));
    }
    let perms = set_lengths
        .iter()
        .enumerate()
        .map(|(t, &n)| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch, t)));
            p
        })
        .collect();
    Ok(BatchIter {
        perms,
        batch,
        length: *set_lengths.iter().max().expect("nonempty"),
        cursor: 0,
    })
}

impl BatchIter {
    pub fn batch_count(&self) -> usize {
        self.length.div_ceil(self.batch)
    }
}

impl Iterator for BatchIter {
    type Item = Vec<Vec<usize>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.length {
            return None;
        }
        let end = (self.cursor + self.batch).min(self.length);
        let items = (self.cursor..end)
            .map(|k| self.perms.iter().map(|p| p[k % p.len()]).collect())
            .collect();
        self.cursor = end;
        Some(items)
    }
}
