use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::DisparityMap;

/// End-point error statistics over valid ground-truth pixels, in
/// full-resolution pixels. Percentages are in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epe: f64,
    /// Percent of pixels with error above 3 (equal to `err_gt3`).
    pub d1: f64,
    pub err_gt1: f64,
    pub err_gt2: f64,
    pub err_gt3: f64,
    /// Mean signed error `pred - gt`.
    pub bias: f64,
    pub valid_pixels: usize,
    pub total_pixels: usize,
}

/// Running sums for [`Metrics`]. Maps are folded in call order, so the
/// result depends only on the sequence of inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsAccumulator {
    abs_sum: f64,
    signed_sum: f64,
    over: [usize; 3],
    valid: usize,
    total: usize,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &DisparityMap, gt: &DisparityMap) -> Result<()> {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::invalid(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.width, pred.height, gt.width, gt.height
            )));
        }
        self.total += gt.values.len();
        for i in 0..gt.values.len() {
            if !gt.valid[i] {
                continue;
            }
            let e = pred.values[i] - gt.values[i];
            self.signed_sum += e;
            self.abs_sum += e.abs();
            for (k, count) in self.over.iter_mut().enumerate() {
                if e.abs() > (k + 1) as f64 {
                    *count += 1;
                }
            }
            self.valid += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.valid == 0 {
            return Err(Error::invalid("no valid ground-truth pixels to evaluate"));
        }
        let n = self.valid as f64;
        let pct = |k: usize| 100.0 * self.over[k] as f64 / n;
        Ok(Metrics {
            epe: self.abs_sum / n,
            d1: pct(2),
            err_gt1: pct(0),
            err_gt2: pct(1),
            err_gt3: pct(2),
            bias: self.signed_sum / n,
            valid_pixels: self.valid,
            total_pixels: self.total,
        })
    }
}

pub fn compute_metrics(pred: &DisparityMap, gt: &DisparityMap) -> Result<Metrics> {
    let mut acc = MetricsAccumulator::new();
    acc.add(pred, gt)?;
    acc.finish()
}
