//! Cost-volume construction by horizontal feature shifting, and the two
//! upsampling schemes compared in the experiments.
//!
//! Interpolation conventions:
//! * spatial axes are corner-aligned: output sample `j` of `n_out` reads
//!   input coordinate `j * (n_in - 1) / (n_out - 1)`, so the four corners are
//!   reproduced exactly;
//! * the disparity axis (trilinear only) is knot-aligned: fine bin `j` reads
//!   coarse coordinate `j / factor`, so coarse bin `c` lands on fine bin
//!   `c * factor` and both describe the same disparity. The bins past the
//!   last knot continue the final segment linearly.

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::distributions::{DisparityGrid, TargetDistribution};
use crate::error::{Error, Result};

/// `[channels, height, width]` features at `1 / scale` of the input
/// resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub scale: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, scale: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || scale == 0 {
            return Err(Error::invalid(
                "feature map needs at least one channel and a positive scale",
            ));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "feature data has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            scale,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// Channel-mean of the elementwise product (one group).
    Correlation,
    /// Left channels followed by shifted right channels.
    Concat,
}

/// Matching scores laid out `[channels, bins, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub grid: DisparityGrid,
    pub spatial_scale: usize,
    pub data: Vec<f64>,
    /// `[bins, height, width]`; false where the shifted right feature fell
    /// outside the frame.
    pub valid: Vec<bool>,
}

impl CostVolume {
    pub fn bins(&self) -> usize {
        self.grid.bins()
    }

    #[inline]
    pub fn index(&self, c: usize, d: usize, y: usize, x: usize) -> usize {
        ((c * self.bins() + d) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, d: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, d, y, x)]
    }

    pub fn is_valid(&self, d: usize, y: usize, x: usize) -> bool {
        self.valid[(d * self.height + y) * self.width + x]
    }

    /// Scores of one pixel across all bins, for channel `c`.
    pub fn column(&self, c: usize, y: usize, x: usize) -> Vec<f64> {
        (0..self.bins()).map(|d| self.at(c, d, y, x)).collect()
    }
}

/// Shift of bin `d` in feature pixels.
fn bin_shift(grid: &DisparityGrid, d: usize, scale: usize) -> Result<i64> {
    let disparity = d as i64 * grid.stride() as i64 - grid.d_ext() as i64;
    if disparity % scale as i64 != 0 {
        return Err(Error::invalid(format!(
            "disparity {disparity} of bin {d} is not a whole number of feature pixels at scale {scale}"
        )));
    }
    Ok(disparity / scale as i64)
}

pub fn build_cost_volume(
    left: &FeatureMap,
    right: &FeatureMap,
    grid: &DisparityGrid,
    fusion: Fusion,
) -> Result<CostVolume> {
    if (left.channels, left.height, left.width, left.scale) != (right.channels, right.height, right.width, right.scale)
    {
        return Err(Error::invalid("left and right features differ in shape or scale"));
    }
    let (ch, h, w) = (left.channels, left.height, left.width);
    let bins = grid.bins();
    let out_channels = match fusion {
        Fusion::Correlation => 1,
        Fusion::Concat => 2 * ch,
    };
    let mut data = vec![0.0; out_channels * bins * h * w];
    let mut valid = vec![false; bins * h * w];
    let plane = bins * h * w;
    for d in 0..bins {
        let shift = bin_shift(grid, d, left.scale)?;
        for y in 0..h {
            for x in 0..w {
                let xr = x as i64 - shift;
                if xr < 0 || xr >= w as i64 {
                    continue;
                }
                let xr = xr as usize;
                let cell = (d * h + y) * w + x;
                valid[cell] = true;
                match fusion {
                    Fusion::Correlation => {
                        let mut acc = 0.0;
                        for c in 0..ch {
                            acc += left.at(c, y, x) * right.at(c, y, xr);
                        }
                        data[cell] = acc / ch as f64;
                    }
                    Fusion::Concat => {
                        for c in 0..ch {
                            data[c * plane + cell] = left.at(c, y, x);
                            data[(ch + c) * plane + cell] = right.at(c, y, xr);
                        }
                    }
                }
            }
        }
    }
    Ok(CostVolume {
        channels: out_channels,
        height: h,
        width: w,
        grid: *grid,
        spatial_scale: left.scale,
        data,
        valid,
    })
}

/// Two-tap linear interpolation weights for one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisInterp {
    pub n_in: usize,
    /// Per output sample: `(i0, w0, i1, w1)`.
    pub taps: Vec<(usize, f64, usize, f64)>,
}

impl AxisInterp {
    pub fn identity(n: usize) -> Self {
        AxisInterp {
            n_in: n,
            taps: (0..n).map(|i| (i, 1.0, i, 0.0)).collect(),
        }
    }

    pub fn corner_aligned(n_in: usize, n_out: usize) -> Self {
        let taps = (0..n_out)
            .map(|j| {
                if n_in == 1 || n_out == 1 {
                    return (0, 1.0, 0, 0.0);
                }
                let src = (j * (n_in - 1)) as f64 / (n_out - 1) as f64;
                let i0 = (src.floor() as usize).min(n_in - 2);
                let t = src - i0 as f64;
                (i0, 1.0 - t, i0 + 1, t)
            })
            .collect();
        AxisInterp { n_in, taps }
    }

    pub fn knot_aligned(n_in: usize, factor: usize) -> Self {
        let taps = (0..n_in * factor)
            .map(|j| {
                if n_in == 1 {
                    return (0, 1.0, 0, 0.0);
                }
                let i0 = (j / factor).min(n_in - 2);
                let t = (j - i0 * factor) as f64 / factor as f64;
                (i0, 1.0 - t, i0 + 1, t)
            })
            .collect();
        AxisInterp { n_in, taps }
    }

    pub fn n_out(&self) -> usize {
        self.taps.len()
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.taps
            .iter()
            .map(|&(i0, w0, i1, w1)| w0 * values[i0] + w1 * values[i1])
            .collect()
    }
}

/// Separable resampling of a `[lead, d, h, w]` block. The `lead` axis is
/// never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan {
    pub bins: AxisInterp,
    pub rows: AxisInterp,
    pub cols: AxisInterp,
}

impl ResamplePlan {
    pub fn bilinear(bins: usize, height: usize, width: usize, factor: usize) -> Self {
        ResamplePlan {
            bins: AxisInterp::identity(bins),
            rows: AxisInterp::corner_aligned(height, height * factor),
            cols: AxisInterp::corner_aligned(width, width * factor),
        }
    }

    pub fn trilinear(bins: usize, height: usize, width: usize, factor: usize) -> Self {
        ResamplePlan {
            bins: AxisInterp::knot_aligned(bins, factor),
            rows: AxisInterp::corner_aligned(height, height * factor),
            cols: AxisInterp::corner_aligned(width, width * factor),
        }
    }

    pub fn in_dims(&self) -> (usize, usize, usize) {
        (self.bins.n_in, self.rows.n_in, self.cols.n_in)
    }

    pub fn out_dims(&self) -> (usize, usize, usize) {
        (self.bins.n_out(), self.rows.n_out(), self.cols.n_out())
    }

    /// Forward map. `input.len()` must be a multiple of the input block size.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let (d0, h0, w0) = self.in_dims();
        let (d1, h1, w1) = self.out_dims();
        let lead = input.len() / (d0 * h0 * w0);
        let mut out = vec![0.0; lead * d1 * h1 * w1];
        // Columns, then rows, then bins; each pass is a two-tap gather.
        let mut cols = vec![0.0; lead * d0 * h0 * w1];
        for r in 0..lead * d0 * h0 {
            let src = &input[r * w0..(r + 1) * w0];
            for (j, &(i0, a, i1, b)) in self.cols.taps.iter().enumerate() {
                cols[r * w1 + j] = a * src[i0] + b * src[i1];
            }
        }
        let mut rows = vec![0.0; lead * d0 * h1 * w1];
        for s in 0..lead * d0 {
            for (j, &(i0, a, i1, b)) in self.rows.taps.iter().enumerate() {
                for x in 0..w1 {
                    rows[(s * h1 + j) * w1 + x] = a * cols[(s * h0 + i0) * w1 + x] + b * cols[(s * h0 + i1) * w1 + x];
                }
            }
        }
        let plane = h1 * w1;
        for l in 0..lead {
            for (j, &(i0, a, i1, b)) in self.bins.taps.iter().enumerate() {
                let dst = (l * d1 + j) * plane;
                let s0 = (l * d0 + i0) * plane;
                let s1 = (l * d0 + i1) * plane;
                for k in 0..plane {
                    out[dst + k] = a * rows[s0 + k] + b * rows[s1 + k];
                }
            }
        }
        out
    }

    /// Adjoint of [`ResamplePlan::forward`]: maps an output-shaped gradient
    /// back onto the input.
    pub fn adjoint(&self, grad_out: &[f64]) -> Vec<f64> {
        let (d0, h0, w0) = self.in_dims();
        let (d1, h1, w1) = self.out_dims();
        let lead = grad_out.len() / (d1 * h1 * w1);
        let plane = h1 * w1;
        let mut rows = vec![0.0; lead * d0 * plane];
        for l in 0..lead {
            for (j, &(i0, a, i1, b)) in self.bins.taps.iter().enumerate() {
                let src = (l * d1 + j) * plane;
                let t0 = (l * d0 + i0) * plane;
                let t1 = (l * d0 + i1) * plane;
                for k in 0..plane {
                    let g = grad_out[src + k];
                    rows[t0 + k] += a * g;
                    rows[t1 + k] += b * g;
                }
            }
        }
        let mut cols = vec![0.0; lead * d0 * h0 * w1];
        for s in 0..lead * d0 {
            for (j, &(i0, a, i1, b)) in self.rows.taps.iter().enumerate() {
                for x in 0..w1 {
                    let g = rows[(s * h1 + j) * w1 + x];
                    cols[(s * h0 + i0) * w1 + x] += a * g;
                    cols[(s * h0 + i1) * w1 + x] += b * g;
                }
            }
        }
        let mut input = vec![0.0; lead * d0 * h0 * w0];
        for r in 0..lead * d0 * h0 {
            for (j, &(i0, a, i1, b)) in self.cols.taps.iter().enumerate() {
                let g = cols[r * w1 + j];
                input[r * w0 + i0] += a * g;
                input[r * w0 + i1] += b * g;
            }
        }
        input
    }

    /// A cell is valid when every tap with non-zero weight is valid.
    fn forward_mask(&self, valid: &[bool]) -> Vec<bool> {
        let (_, h0, w0) = self.in_dims();
        let (_, h1, w1) = self.out_dims();
        let mut out = Vec::with_capacity(self.bins.n_out() * h1 * w1);
        let ok = |d: usize, y: usize, x: usize| valid[(d * h0 + y) * w0 + x];
        let used = |i0: usize, a: f64, i1: usize, b: f64| {
            let mut v = Vec::with_capacity(2);
            if a != 0.0 {
                v.push(i0);
            }
            if b != 0.0 {
                v.push(i1);
            }
            v
        };
        for &(d0, da, d1, db) in &self.bins.taps {
            let ds = used(d0, da, d1, db);
            for &(y0, ya, y1, yb) in &self.rows.taps {
                let ys = used(y0, ya, y1, yb);
                for &(x0, xa, x1, xb) in &self.cols.taps {
                    let xs = used(x0, xa, x1, xb);
                    let all = ds.iter().all(|&d| ys.iter().all(|&y| xs.iter().all(|&x| ok(d, y, x))));
                    out.push(all);
                }
            }
        }
        out
    }
}

fn resample_volume(v: &CostVolume, plan: &ResamplePlan, grid: DisparityGrid, factor: usize) -> CostVolume {
    let (_, h1, w1) = plan.out_dims();
    CostVolume {
        channels: v.channels,
        height: h1,
        width: w1,
        grid,
        spatial_scale: (v.spatial_scale / factor).max(1),
        data: plan.forward(&v.data),
        valid: plan.forward_mask(&v.valid),
    }
}

/// Spatial-only upsampling; the bin axis keeps its coarse resolution.
pub fn upsample_bilinear_spatial(v: &CostVolume, factor: usize) -> Result<CostVolume> {
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be at least 1"));
    }
    let plan = ResamplePlan::bilinear(v.bins(), v.height, v.width, factor);
    Ok(resample_volume(v, &plan, v.grid, factor))
}

/// Upsamples bins and both spatial axes by `factor`. The bin stride must be
/// divisible by `factor`.
pub fn upsample_trilinear(v: &CostVolume, factor: usize) -> Result<CostVolume> {
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be at least 1"));
    }
    let grid = v.grid.refined(factor)?;
    let plan = ResamplePlan::trilinear(v.bins(), v.height, v.width, factor);
    Ok(resample_volume(v, &plan, grid, factor))
}

/// Smallest L1 distance between `target` and any vector obtained by
/// knot-aligned linear interpolation of `ceil(n / factor)` free knot values.
///
/// Solved exactly as a least-absolute-deviation linear program.
pub fn piecewise_linear_fit_gap(target: &TargetDistribution, factor: usize) -> Result<f64> {
    piecewise_linear_fit_gap_values(&target.probs, factor)
}

pub fn piecewise_linear_fit_gap_values(values: &[f64], factor: usize) -> Result<f64> {
    if factor == 0 {
        return Err(Error::invalid("factor must be at least 1"));
    }
    if values.is_empty() || factor == 1 {
        return Ok(0.0);
    }
    let n = values.len();
    let knots = n.div_ceil(factor);
    let interp = AxisInterp::knot_aligned(knots, factor);

    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let knot_vars: Vec<_> = (0..knots)
        .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for (j, &value) in values.iter().enumerate() {
        let over = lp.add_var(1.0, (0.0, f64::INFINITY));
        let under = lp.add_var(1.0, (0.0, f64::INFINITY));
        let (i0, a, i1, b) = interp.taps[j];
        let mut expr = vec![(over, -1.0), (under, 1.0)];
        if i0 == i1 {
            expr.push((knot_vars[i0], a + b));
        } else {
            expr.push((knot_vars[i0], a));
            expr.push((knot_vars[i1], b));
        }
        // interp(knots)_j - over + under = value
        lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, value);
    }
    let outcome = lp.solve().map_err(|e| Error::Solver(e.to_string()))?;
    let solution = outcome
        .into_solution()
        .map_err(|_| Error::Solver("solve interrupted".into()))?;
    Ok(solution.objective().max(0.0))
}

/// Largest `|v[j-1] - 2 v[j] + v[j+1]|` over triples lying inside a single
/// segment between consecutive knots of a knot-aligned upsampling.
pub fn max_interior_second_difference(fine: &[f64], factor: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 1..fine.len().saturating_sub(1) {
        let segment = (j - 1) / factor;
        if j < (segment + 1) * factor {
            let sd = fine[j - 1] - 2.0 * fine[j] + fine[j + 1];
            worst = worst.max(sd.abs());
        }
    }
    worst
}
