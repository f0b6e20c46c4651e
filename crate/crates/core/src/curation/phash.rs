//! DCT perceptual hash.
//!
//! Pipeline: bilinear resize to 32x32, orthonormal 2-D DCT-II, take the
//! top-left 8x8 block in row-major order with the DC slot replaced by
//! coefficient (0, 8), threshold each value strictly above the median.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RESIZE: usize = 32;
const BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PerceptualHash(pub u64);

impl PerceptualHash {
    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn hamming(self, other: PerceptualHash) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    /// Bit `i` as +1.0 / -1.0, used as an image feature vector.
    pub fn to_signs(self) -> Vec<f64> {
        (0..64)
            .map(|i| if self.0 >> i & 1 == 1 { 1.0 } else { -1.0 })
            .collect()
    }
}

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Decoded grayscale image, intensities stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "zero-dimension image {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(PixelGrid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn from_luma(img: &image::GrayImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|&p| f64::from(p)).collect();
        Self::new(img.width() as usize, img.height() as usize, data)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_luma(&img.to_luma8())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear resampling with pixel-center alignment and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> PixelGrid {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let (y0, y1, wy) = sample_axis(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, wx) = sample_axis(x, sx, self.width);
                let top = lerp(self.get(x0, y0), self.get(x1, y0), wx);
                let bottom = lerp(self.get(x0, y1), self.get(x1, y1), wx);
                data.push(lerp(top, bottom, wy));
            }
        }
        PixelGrid {
            width,
            height,
            data,
        }
    }
}

fn sample_axis(dst: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, src - lo as f64)
}

// a + t(b - a) returns `a` exactly when a == b, which keeps flat images flat.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn dct_basis() -> &'static [[f64; RESIZE]; RESIZE] {
    static BASIS: OnceLock<[[f64; RESIZE]; RESIZE]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let n = RESIZE as f64;
        let mut basis = [[0.0; RESIZE]; RESIZE];
        for (u, row) in basis.iter_mut().enumerate() {
            let alpha = if u == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha * (PI * (2 * x + 1) as f64 * u as f64 / (2.0 * n)).cos();
            }
        }
        basis
    })
}

/// Orthonormal 2-D DCT-II of a 32x32 grid: `out[u][v]`, `u` vertical frequency.
fn dct2(grid: &PixelGrid) -> Vec<[f64; RESIZE]> {
    let basis = dct_basis();
    // rows first: tmp[y][v] = sum_x f(x, y) * basis[v][x]
    let mut tmp = vec![[0.0; RESIZE]; RESIZE];
    for (y, row) in tmp.iter_mut().enumerate() {
        for (v, out) in row.iter_mut().enumerate() {
            *out = (0..RESIZE).map(|x| grid.get(x, y) * basis[v][x]).sum();
        }
    }
    let mut out = vec![[0.0; RESIZE]; RESIZE];
    for (u, row) in out.iter_mut().enumerate() {
        for (v, c) in row.iter_mut().enumerate() {
            *c = (0..RESIZE).map(|y| tmp[y][v] * basis[u][y]).sum();
        }
    }
    out
}

/// The 64 coefficients the hash thresholds, in bit order.
pub fn hash_coefficients(image: &PixelGrid) -> [f64; 64] {
    let mut small = image.resize_bilinear(RESIZE, RESIZE);
    // Removing the mean only moves the DC term, which is not hashed, and
    // makes every AC coefficient of a flat image exactly zero.
    let mean = small.data.iter().sum::<f64>() / small.data.len() as f64;
    for p in &mut small.data {
        *p -= mean;
    }
    let coeffs = dct2(&small);
    let mut values = [0.0; 64];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            values[u * BLOCK + v] = coeffs[u][v];
        }
    }
    values[0] = coeffs[0][BLOCK];
    values
}

pub fn compute_phash(image: &PixelGrid) -> PerceptualHash {
    let values = hash_coefficients(image);
    let mut sorted = values;
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[31] + sorted[32]) / 2.0;
    let bits = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > median)
        .fold(0u64, |acc, (i, _)| acc | 1 << i);
    PerceptualHash(bits)
}

pub fn hash_similarity(a: PerceptualHash, b: PerceptualHash) -> f64 {
    1.0 - f64::from(a.hamming(b)) / 64.0
}
