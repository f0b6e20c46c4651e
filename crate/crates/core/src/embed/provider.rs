use std::path::{Path, PathBuf};

use crate::curation::{compute_phash, PixelGrid};
use crate::hashing::StableHasher;

/// Source of per-modality feature vectors.
///
/// Implementations must be deterministic per input and keep their
/// dimensions fixed for the lifetime of the instance.
pub trait EmbeddingProvider: Send + Sync {
    fn text_dim(&self) -> usize;

    fn image_dim(&self) -> usize;

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, String>;

    /// `path` is as stored in the sample, relative to the provider's image root.
    fn embed_image(&self, path: &str) -> Result<Vec<f64>, String>;
}

/// Offline provider: seeded feature hashing of character n-grams for text,
/// perceptual-hash sign bits for images.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    text_dim: usize,
    max_ngram: usize,
    seed: u64,
    image_root: PathBuf,
}

impl HashingProvider {
    pub const DEFAULT_TEXT_DIM: usize = 256;
    pub const IMAGE_DIM: usize = 64;

    pub fn new(text_dim: usize, seed: u64) -> Self {
        HashingProvider {
            text_dim: text_dim.max(1),
            max_ngram: 3,
            seed,
            image_root: PathBuf::from("."),
        }
    }

    pub fn with_image_root(mut self, root: impl AsRef<Path>) -> Self {
        self.image_root = root.as_ref().to_path_buf();
        self
    }
}

impl Default for HashingProvider {
    fn default() -> Self {
        HashingProvider::new(Self::DEFAULT_TEXT_DIM, 0)
    }
}

impl EmbeddingProvider for HashingProvider {
    fn text_dim(&self) -> usize {
        self.text_dim
    }

    fn image_dim(&self) -> usize {
        Self::IMAGE_DIM
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, String> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = vec![0.0; self.text_dim];
        let mut buf = [0u8; 4];
        for n in 1..=self.max_ngram {
            for gram in chars.windows(n) {
                let mut h = StableHasher::new(self.seed);
                h.write_u64(n as u64);
                for c in gram {
                    h.write(c.encode_utf8(&mut buf).as_bytes());
                }
                let bits = h.finish();
                let slot = (bits % self.text_dim as u64) as usize;
                let sign = if bits >> 63 == 1 { -1.0 } else { 1.0 };
                out[slot] += sign;
            }
        }
        Ok(out)
    }

    fn embed_image(&self, path: &str) -> Result<Vec<f64>, String> {
        let grid = PixelGrid::open(&self.image_root.join(path)).map_err(|e| e.to_string())?;
        Ok(compute_phash(&grid).to_signs())
    }
}
