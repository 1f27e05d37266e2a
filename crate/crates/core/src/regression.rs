//! Soft-argmax disparity regression and its gradient.

use serde::{Deserialize, Serialize};

use crate::distributions::DisparityGrid;
use crate::error::{Error, Result};

/// Per-pixel disparity in full-resolution pixels with a validity mask.
/// Row-major, `values.len() == width * height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        let valid = values.iter().map(|v| v.is_finite()).collect();
        Ok(DisparityMap {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        DisparityMap {
            width,
            height,
            values: vec![value; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= total;
    }
    p
}

fn check_len(z: &[f64], grid: &DisparityGrid) -> Result<()> {
    if z.len() != grid.bins() {
        return Err(Error::invalid(format!(
            "logit vector has {} entries, grid has {} bins",
            z.len(),
            grid.bins()
        )));
    }
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit {bad}")));
    }
    Ok(())
}

/// Expected disparity under `softmax(z)`, in full-resolution units.
pub fn soft_argmax(z: &[f64], grid: &DisparityGrid) -> Result<f64> {
    check_len(z, grid)?;
    let p = softmax(z);
    Ok(p.iter().enumerate().map(|(i, p)| p * grid.bin_value(i)).sum())
}

/// Exact `d(soft_argmax)/dz`: `p_i * (i - d_bin) * stride`.
pub fn soft_argmax_gradient(z: &[f64], grid: &DisparityGrid) -> Result<Vec<f64>> {
    check_len(z, grid)?;
    let p = softmax(z);
    let d_bin: f64 = p.iter().enumerate().map(|(i, p)| p * i as f64).sum();
    let stride = grid.stride() as f64;
    Ok(p.iter()
        .enumerate()
        .map(|(i, p)| p * (i as f64 - d_bin) * stride)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasEntry {
    pub bin: usize,
    /// `|i - d|` in bin units.
    pub distance: f64,
    pub magnitude: f64,
}

/// Gradient magnitudes ordered by distance from the current estimate (ties
/// by bin index).
pub fn gradient_bias_profile(z: &[f64], grid: &DisparityGrid) -> Result<Vec<BiasEntry>> {
    let g = soft_argmax_gradient(z, grid)?;
    let p = softmax(z);
    let d_bin: f64 = p.iter().enumerate().map(|(i, p)| p * i as f64).sum();
    let mut entries: Vec<BiasEntry> = g
        .iter()
        .enumerate()
        .map(|(bin, g)| BiasEntry {
            bin,
            distance: (bin as f64 - d_bin).abs(),
            magnitude: g.abs(),
        })
        .collect();
    entries.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.bin.cmp(&b.bin)));
    Ok(entries)
}

/// Soft-argmax restricted to a window of `k` bins around the arg-max.
///
/// The window is centred on the first maximal bin and clamped to the grid;
/// `k` must be odd unless it covers the whole grid.
pub fn topk_soft_argmax(z: &[f64], k: usize, grid: &DisparityGrid) -> Result<f64> {
    check_len(z, grid)?;
    let bins = grid.bins();
    if k == 0 || k > bins || (k.is_multiple_of(2) && k != bins) {
        return Err(Error::invalid(format!("window size {k} must be odd and in 1..={bins}")));
    }
    let p = softmax(z);
    let mut peak = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[peak] {
            peak = i;
        }
    }
    let start = peak.saturating_sub(k / 2).min(bins - k);
    let window = start..start + k;
    let mass: f64 = p[window.clone()].iter().sum();
    Ok(window.map(|i| p[i] / mass * grid.bin_value(i)).sum())
}
