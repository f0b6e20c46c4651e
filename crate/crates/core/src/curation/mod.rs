//! Dataset purification: near-duplicate removal, commercial-content
//! filtering and low-resolution filtering.

mod phash;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use phash::{compute_phash, hash_coefficients, hash_similarity, PerceptualHash, PixelGrid};

use crate::data::{DatasetSplit, Sample};
use crate::error::{Error, Result};

/// `extra` key holding the fraction of image area covered by watermarks.
pub const WATERMARK_AREA_KEY: &str = "watermark_area";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub dedup_similarity_threshold: f64,
    pub min_width: u32,
    pub min_height: u32,
    pub watermark_area_threshold: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            dedup_similarity_threshold: 0.90,
            min_width: 512,
            min_height: 512,
            watermark_area_threshold: 0.15,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            (
                "dedup_similarity_threshold",
                self.dedup_similarity_threshold,
            ),
            ("watermark_area_threshold", self.watermark_area_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub kept: Vec<String>,
    /// `(removed_id, kept_id)` pairs.
    pub removed_duplicates: Vec<(String, String)>,
    pub removed_low_res: Vec<String>,
    pub removed_commercial: Vec<String>,
    /// Subset of `removed_low_res` whose image could not be read at all.
    pub unreadable: Vec<String>,
}

impl CurationReport {
    pub fn removed_count(&self) -> usize {
        self.removed_duplicates.len() + self.removed_low_res.len() + self.removed_commercial.len()
    }
}

/// Greedy near-duplicate removal in ascending-id order.
///
/// A sample is dropped when its similarity to an already-kept sample is
/// strictly above the threshold; it is reported against the lowest-id such
/// kept sample.
pub fn deduplicate(
    samples: &[(String, PerceptualHash)],
    cfg: &CurationConfig,
) -> (Vec<String>, Vec<(String, String)>) {
    let mut order: Vec<&(String, PerceptualHash)> = samples.iter().collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));
    let mut kept: Vec<&(String, PerceptualHash)> = Vec::new();
    let mut removed = Vec::new();
    for item in order {
        let dup = kept
            .iter()
            .find(|k| hash_similarity(k.1, item.1) > cfg.dedup_similarity_threshold);
        match dup {
            Some(k) => removed.push((item.0.clone(), k.0.clone())),
            None => kept.push(item),
        }
    }
    (kept.into_iter().map(|k| k.0.clone()).collect(), removed)
}

/// Ids whose dimensions fall strictly below the configured minimum.
pub fn filter_low_resolution(dims: &[(String, u32, u32)], cfg: &CurationConfig) -> Vec<String> {
    dims.iter()
        .filter(|(_, w, h)| *w < cfg.min_width || *h < cfg.min_height)
        .map(|(id, _, _)| id.clone())
        .collect()
}

/// Ids flagged as commercial content: watermark area strictly above the
/// threshold, or the external predicate reports a logo.
pub fn filter_commercial<'a, I, F>(samples: I, cfg: &CurationConfig, has_logo: F) -> Vec<String>
where
    I: IntoIterator<Item = &'a Sample>,
    F: Fn(&Sample) -> bool,
{
    samples
        .into_iter()
        .filter(|s| {
            let watermark = s
                .extra_f64(WATERMARK_AREA_KEY)
                .is_some_and(|a| a > cfg.watermark_area_threshold);
            watermark || has_logo(s)
        })
        .map(|s| s.id.clone())
        .collect()
}

/// Logo predicate that never fires; watermark metadata still applies.
pub fn no_logo(_: &Sample) -> bool {
    false
}

#[derive(Debug, Clone)]
struct ImageInfo {
    width: u32,
    height: u32,
    hash: PerceptualHash,
}

fn resolve_image(base_dir: &Path, sample: &Sample) -> Option<PathBuf> {
    sample.image_path.as_ref().map(|p| base_dir.join(p))
}

fn inspect(path: &Path) -> Result<ImageInfo> {
    let grid = PixelGrid::open(path)?;
    Ok(ImageInfo {
        width: grid.width() as u32,
        height: grid.height() as u32,
        hash: compute_phash(&grid),
    })
}

/// Runs the three purification stages over a split whose image paths are
/// relative to `base_dir`.
///
/// Unreadable or missing images are removed as low-resolution and listed
/// in `unreadable`. Dedup runs first, then the commercial filter, then the
/// resolution filter, so each id lands in exactly one bucket.
pub fn curate<F>(
    split: &DatasetSplit,
    base_dir: &Path,
    cfg: &CurationConfig,
    has_logo: F,
) -> Result<(DatasetSplit, CurationReport)>
where
    F: Fn(&Sample) -> bool,
{
    cfg.validate()?;
    let infos: Vec<Option<ImageInfo>> = split
        .samples
        .par_iter()
        .map(|s| {
            let path = resolve_image(base_dir, s)?;
            match inspect(&path) {
                Ok(info) => Some(info),
                Err(e) => {
                    log::warn!("sample {}: {e}", s.id);
                    None
                }
            }
        })
        .collect();

    let mut report = CurationReport::default();
    let mut readable = BTreeMap::new();
    for (sample, info) in split.samples.iter().zip(infos) {
        match info {
            Some(info) => {
                readable.insert(sample.id.clone(), (sample, info));
            }
            None => {
                report.unreadable.push(sample.id.clone());
                report.removed_low_res.push(sample.id.clone());
            }
        }
    }

    let hashes: Vec<(String, PerceptualHash)> = readable
        .iter()
        .map(|(id, (_, info))| (id.clone(), info.hash))
        .collect();
    let (unique, dups) = deduplicate(&hashes, cfg);
    report.removed_duplicates = dups;

    let commercial = filter_commercial(unique.iter().map(|id| readable[id].0), cfg, has_logo);
    let remaining: Vec<(String, u32, u32)> = unique
        .iter()
        .filter(|id| !commercial.contains(id))
        .map(|id| {
            let info = &readable[id].1;
            (id.clone(), info.width, info.height)
        })
        .collect();
    let low_res = filter_low_resolution(&remaining, cfg);
    report.removed_commercial = commercial;
    report.removed_low_res.extend(low_res.iter().cloned());

    let kept_set: std::collections::HashSet<&str> = remaining
        .iter()
        .map(|(id, _, _)| id.as_str())
        .filter(|id| !low_res.iter().any(|r| r == id))
        .collect();
    let kept_samples: Vec<Sample> = split
        .samples
        .iter()
        .filter(|s| kept_set.contains(s.id.as_str()))
        .cloned()
        .collect();
    report.kept = kept_samples.iter().map(|s| s.id.clone()).collect();
    Ok((DatasetSplit::new(split.name, kept_samples), report))
}

/// One line of a curation report file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub id: String,
    pub status: CurationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unreadable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurationStatus {
    Kept,
    Duplicate,
    Commercial,
    LowResolution,
}

impl CurationReport {
    pub fn records(&self) -> Vec<CurationRecord> {
        let mut out: Vec<CurationRecord> = self
            .kept
            .iter()
            .map(|id| record(id, CurationStatus::Kept))
            .collect();
        out.extend(
            self.removed_duplicates
                .iter()
                .map(|(id, of)| CurationRecord {
                    duplicate_of: Some(of.clone()),
                    ..record(id, CurationStatus::Duplicate)
                }),
        );
        out.extend(
            self.removed_commercial
                .iter()
                .map(|id| record(id, CurationStatus::Commercial)),
        );
        out.extend(self.removed_low_res.iter().map(|id| CurationRecord {
            unreadable: self.unreadable.contains(id),
            ..record(id, CurationStatus::LowResolution)
        }));
        out
    }
}

fn record(id: &str, status: CurationStatus) -> CurationRecord {
    CurationRecord {
        id: id.to_string(),
        status,
        duplicate_of: None,
        unreadable: false,
    }
}
