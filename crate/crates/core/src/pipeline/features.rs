//! Patch-correlation matching cost.
//!
//! Each full-resolution pixel is described by its zero-mean 5x5 patch. The
//! descriptors are average-pooled over `FEATURE_SCALE x FEATURE_SCALE`
//! blocks and normalised to unit length, and the two views are correlated
//! on the coarse disparity grid.

use super::data::{Image, StereoSample};
use super::FEATURE_SCALE;
use crate::costvolume::{build_cost_volume, CostVolume, FeatureMap, Fusion};
use crate::distributions::DisparityGrid;
use crate::error::{Error, Result};

pub const PATCH_RADIUS: usize = 2;
pub const PATCH_CHANNELS: usize = (2 * PATCH_RADIUS + 1) * (2 * PATCH_RADIUS + 1);

/// Quarter-resolution unit-norm patch descriptors, `[25, H/4, W/4]`.
pub fn patch_features(img: &Image) -> Result<FeatureMap> {
    let (w, h) = (img.width, img.height);
    if w % FEATURE_SCALE != 0 || h % FEATURE_SCALE != 0 {
        return Err(Error::invalid(format!(
            "image {w}x{h} is not a multiple of {FEATURE_SCALE}"
        )));
    }
    let (hq, wq) = (h / FEATURE_SCALE, w / FEATURE_SCALE);
    let r = PATCH_RADIUS as isize;
    let mut pooled = vec![0.0; PATCH_CHANNELS * hq * wq];
    let mut patch = [0.0; PATCH_CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let mut k = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    patch[k] = img.get(xx, yy);
                    k += 1;
                }
            }
            let mean = patch.iter().sum::<f64>() / PATCH_CHANNELS as f64;
            let cell = (y / FEATURE_SCALE) * wq + x / FEATURE_SCALE;
            for (c, v) in patch.iter().enumerate() {
                pooled[c * hq * wq + cell] += v - mean;
            }
        }
    }
    for cell in 0..hq * wq {
        let norm = (0..PATCH_CHANNELS)
            .map(|c| pooled[c * hq * wq + cell].powi(2))
            .sum::<f64>()
            .sqrt();
        for c in 0..PATCH_CHANNELS {
            let v = &mut pooled[c * hq * wq + cell];
            *v = if norm > 1e-12 { *v / norm } else { 0.0 };
        }
    }
    FeatureMap::new(PATCH_CHANNELS, hq, wq, FEATURE_SCALE, pooled)
}

/// Quarter-resolution correlation volume over `grid`; higher is better.
pub fn compute_matching_cost(sample: &StereoSample, grid: &DisparityGrid) -> Result<CostVolume> {
    let fl = patch_features(&sample.left)?;
    let fr = patch_features(&sample.right)?;
    build_cost_volume(&fl, &fr, grid, Fusion::Correlation)
}
