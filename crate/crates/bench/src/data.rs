//! Classification datasets: MNIST IDX files and synthetic Gaussian blobs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{fail, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major samples with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (&self.x[i * self.dim..(i + 1) * self.dim], self.y[i])
    }

    /// Contiguous sub-range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            dim: self.dim,
            classes: self.classes,
            x: self.x[start * self.dim..end * self.dim].to_vec(),
            y: self.y[start..end].to_vec(),
        }
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes(b.try_into().unwrap())),
        None => fail!(Format, "{what}: truncated header"),
    }
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        fail!(Format, "images: bad magic 0x{magic:08x}");
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let want = n * rows * cols;
    if body.len() != want {
        fail!(Format, "images: header promises {want} pixel bytes, file has {}", body.len());
    }
    Ok((n, rows, cols, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        fail!(Format, "labels: bad magic 0x{magic:08x}");
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        fail!(Format, "labels: header promises {n} labels, file has {}", body.len());
    }
    Ok(body)
}

/// Builds a dataset from IDX bytes with pixels scaled to `[0, 1]`.
pub fn mnist_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        fail!(Format, "{n} images but {} labels", labels.len());
    }
    let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = y.iter().max().map_or(0, |m| m + 1).max(10);
    Ok(Dataset {
        dim: rows * cols,
        classes,
        x: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        y,
    })
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    mnist_from_bytes(&std::fs::read(images_path)?, &std::fs::read(labels_path)?)
}

/// Serializes images (`rows * cols` bytes each) as an IDX image file.
pub fn write_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for img in images {
        if img.len() != rows * cols {
            fail!(Format, "image has {} bytes, expected {}", img.len(), rows * cols);
        }
        out.extend_from_slice(img);
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Parameters of a Gaussian-blob dataset. Class means are drawn once from a
/// fixed generator (independent of `seed`) as `N(0, separation²/dim · I)`, so
/// datasets drawn with different seeds share their means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobParams {
    pub classes: usize,
    pub dim: usize,
    pub n: usize,
    pub seed: u64,
    pub separation: f64,
    pub noise: f64,
}

const MEANS_SEED: u64 = 0xB10B_5EED;

pub fn synth_blobs(classes: usize, dim: usize, n: usize, seed: u64) -> Result<Dataset> {
    synth_blobs_with(BlobParams {
        classes,
        dim,
        n,
        seed,
        separation: 4.0,
        noise: 1.0,
    })
}

pub fn synth_blobs_with(p: BlobParams) -> Result<Dataset> {
    if p.classes < 2 {
        fail!(Config, "blobs need at least 2 classes, got {}", p.classes);
    }
    if p.dim == 0 || !(p.noise >= 0.0) || !(p.separation >= 0.0) {
        fail!(Config, "blob dimension, noise and separation must be positive");
    }
    let mut mrng = ChaCha8Rng::seed_from_u64(MEANS_SEED ^ ((p.classes as u64) << 32) ^ p.dim as u64);
    let m = Normal::new(0.0, p.separation / (p.dim as f64).sqrt()).unwrap();
    let means: Vec<f64> = (0..p.classes * p.dim).map(|_| m.sample(&mut mrng)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut y: Vec<usize> = (0..p.n).map(|i| i % p.classes).collect();
    y.shuffle(&mut rng);
    let noise = Normal::new(0.0, p.noise).unwrap();
    let mut x = Vec::with_capacity(p.n * p.dim);
    for &c in &y {
        for d in 0..p.dim {
            x.push(means[c * p.dim + d] + noise.sample(&mut rng));
        }
    }
    Ok(Dataset {
        dim: p.dim,
        classes: p.classes,
        x,
        y,
    })
}
