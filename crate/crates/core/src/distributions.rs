//! Discrete supervision targets over a disparity axis.
//!
//! All targets live in *bin-index* space: bin `i` of a [`DisparityGrid`]
//! stands for the full-resolution disparity `-d_ext + i * stride`. A ground
//! truth `gt` is therefore centred at `mu = (gt + d_ext) / stride` and the
//! width `sigma` is measured in bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::DisparityMap;

/// Axis metadata for the extended disparity range `[-d_ext, d_max + d_ext)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisparityGrid {
    d_max: usize,
    d_ext: usize,
    stride: usize,
    bins: usize,
}

impl DisparityGrid {
    pub fn new(d_max: usize, d_ext: usize, stride: usize) -> Result<Self> {
        if d_max == 0 {
            return Err(Error::invalid("d_max must be positive"));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        let span = d_max + 2 * d_ext;
        if !span.is_multiple_of(stride) {
            return Err(Error::invalid(format!(
                "d_max + 2*d_ext = {span} is not divisible by stride {stride}"
            )));
        }
        let bins = span / stride;
        if bins < 2 {
            return Err(Error::invalid(format!("grid has {bins} bin(s), need at least 2")));
        }
        Ok(DisparityGrid {
            d_max,
            d_ext,
            stride,
            bins,
        })
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn d_ext(&self) -> usize {
        self.d_ext
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Full-resolution disparity represented by `bin`.
    pub fn bin_value(&self, bin: usize) -> f64 {
        bin as f64 * self.stride as f64 - self.d_ext as f64
    }

    /// All bin values, in bin order.
    pub fn bin_values(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.bin_value(i)).collect()
    }

    /// Fractional bin coordinate of a full-resolution disparity.
    pub fn bin_coord(&self, disparity: f64) -> f64 {
        (disparity + self.d_ext as f64) / self.stride as f64
    }

    /// Inclusive lower end of the extended range.
    pub fn lower(&self) -> f64 {
        -(self.d_ext as f64)
    }

    /// Exclusive upper end of the extended range.
    pub fn upper(&self) -> f64 {
        (self.d_max + self.d_ext) as f64
    }

    /// Grid with the same range and `factor` times finer bins.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.stride.is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "stride {} cannot be refined by factor {factor}",
                self.stride
            )));
        }
        DisparityGrid::new(self.d_max, self.d_ext, self.stride / factor)
    }
}

/// A normalized probability vector together with the parameters it was
/// sampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    pub probs: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {v}")))
    }
}

/// Normalizes `log_weights` (up to an additive constant) into a distribution.
/// The largest log weight is subtracted first so targets centred far outside
/// the grid still produce a proper distribution.
fn normalize_log_weights(log_weights: &mut [f64]) {
    let top = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in log_weights.iter_mut() {
        *w = (*w - top).exp();
        total += *w;
    }
    for w in log_weights.iter_mut() {
        *w /= total;
    }
}

/// Gaussian weights sampled on every bin and normalized by their sum.
pub fn sample_gaussian_target(mu: f64, sigma: f64, grid: &DisparityGrid) -> Result<TargetDistribution> {
    check_finite("mu", mu)?;
    check_finite("sigma", sigma)?;
    if sigma <= 0.0 {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let denom = 2.0 * sigma * sigma;
    let mut probs: Vec<f64> = (0..grid.bins())
        .map(|i| {
            let dx = i as f64 - mu;
            -dx * dx / denom
        })
        .collect();
    normalize_log_weights(&mut probs);
    Ok(TargetDistribution { probs, mu, sigma })
}

/// Laplacian weights `exp(-|i - mu| / b)` normalized over the grid.
pub fn sample_laplacian_target(mu: f64, b: f64, grid: &DisparityGrid) -> Result<TargetDistribution> {
    check_finite("mu", mu)?;
    check_finite("b", b)?;
    if b <= 0.0 {
        return Err(Error::invalid(format!("b must be positive, got {b}")));
    }
    let mut probs: Vec<f64> = (0..grid.bins()).map(|i| -(i as f64 - mu).abs() / b).collect();
    normalize_log_weights(&mut probs);
    Ok(TargetDistribution { probs, mu, sigma: b })
}

/// Expectation of `dist` mapped back to full-resolution disparity.
pub fn distribution_expectation(dist: &[f64], grid: &DisparityGrid) -> Result<f64> {
    if dist.len() != grid.bins() {
        return Err(Error::invalid(format!(
            "distribution has {} entries, grid has {} bins",
            dist.len(),
            grid.bins()
        )));
    }
    let mass: f64 = dist.iter().sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("distribution sums to {mass}, expected 1")));
    }
    Ok(dist.iter().enumerate().map(|(i, p)| p * grid.bin_value(i)).sum())
}

/// Mass and mean behaviour of an integer-sampled Gaussian restricted to
/// `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationReport {
    /// Fraction of the untruncated mass that falls outside `[lo, hi]`.
    pub mass_deficit: f64,
    /// Mean of the distribution renormalized on `[lo, hi]`, minus `mu`.
    pub expectation_shift: f64,
}

/// Compensated (Neumaier) summation.
fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn truncation_analysis(mu: f64, sigma: f64, lo: i64, hi: i64) -> Result<TruncationReport> {
    check_finite("mu", mu)?;
    check_finite("sigma", sigma)?;
    if sigma <= 0.0 {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if lo >= hi {
        return Err(Error::invalid(format!("need lo < hi, got [{lo}, {hi}]")));
    }
    let denom = 2.0 * sigma * sigma;
    let g = |x: i64| {
        let dx = x as f64 - mu;
        (-dx * dx / denom).exp()
    };

    // Beyond this radius the Gaussian tail is below double precision.
    let radius = mu.abs() + 12.0 * sigma + 12.0;
    let s_lo = (mu - radius).ceil() as i64;
    let s_hi = (mu + radius).floor() as i64;
    let z_inf = neumaier_sum((s_lo..=s_hi).map(g));
    let outside = neumaier_sum((s_lo..=s_hi).filter(|x| *x < lo || *x > hi).map(g));

    let z_range = neumaier_sum((lo..=hi).map(g));
    // When 2*mu is an integer, lattice points mirrored about mu contribute
    // exactly opposite first moments; drop those pairs so only the
    // asymmetric remainder is summed.
    let twice = 2.0 * mu;
    let paired_radius = if twice == twice.round() && mu >= lo as f64 && mu <= hi as f64 {
        Some((mu - lo as f64).min(hi as f64 - mu))
    } else {
        None
    };
    let first_moment = neumaier_sum((lo..=hi).filter_map(|x| {
        let dx = x as f64 - mu;
        match paired_radius {
            Some(r) if dx.abs() <= r => None,
            _ => Some(g(x) * dx),
        }
    }));

    Ok(TruncationReport {
        mass_deficit: outside / z_inf,
        expectation_shift: first_moment / z_range,
    })
}

/// Per-pixel targets laid out bin-major (`[bins, height * width]`), matching
/// the cost-volume layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetField {
    pub grid: DisparityGrid,
    pub width: usize,
    pub height: usize,
    pub probs: Vec<f64>,
    pub valid: Vec<bool>,
    /// Pixels valid in the ground truth but outside the extended range.
    pub out_of_range: usize,
}

impl TargetField {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Target vector of one pixel (copied out of the bin-major layout).
    pub fn pixel_probs(&self, pixel: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.grid.bins()).map(|b| self.probs[b * n + pixel]).collect()
    }
}

/// Builds a Gaussian target for every valid pixel of `gt`. Invalid pixels get
/// a uniform placeholder so downstream arithmetic stays finite; they are
/// excluded through `valid`.
pub fn build_target_field(gt: &DisparityMap, sigma: f64, grid: &DisparityGrid) -> Result<TargetField> {
    check_finite("sigma", sigma)?;
    if sigma <= 0.0 {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let n = gt.width * gt.height;
    let bins = grid.bins();
    let mut probs = vec![1.0 / bins as f64; bins * n];
    let mut valid = vec![false; n];
    let mut out_of_range = 0;
    for pixel in 0..n {
        if !gt.valid[pixel] {
            continue;
        }
        let d = gt.values[pixel];
        if !d.is_finite() || d > grid.upper() || d < grid.lower() {
            out_of_range += 1;
            continue;
        }
        let target = sample_gaussian_target(grid.bin_coord(d), sigma, grid)?;
        for (b, p) in target.probs.iter().enumerate() {
            probs[b * n + pixel] = *p;
        }
        valid[pixel] = true;
    }
    Ok(TargetField {
        grid: *grid,
        width: gt.width,
        height: gt.height,
        probs,
        valid,
        out_of_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid48() -> DisparityGrid {
        DisparityGrid::new(48, 0, 1).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(DisparityGrid::new(48, 16, 4).is_ok());
        assert_eq!(DisparityGrid::new(48, 16, 4).unwrap().bins(), 20);
        assert!(DisparityGrid::new(48, 2, 5).is_err());
        assert!(DisparityGrid::new(1, 0, 1).is_err());
        assert!(DisparityGrid::new(48, 0, 0).is_err());
        let g = DisparityGrid::new(48, 16, 4).unwrap();
        assert_eq!(g.bin_value(0), -16.0);
        assert_eq!(g.bin_value(7), 12.0);
        assert_eq!(g.bin_coord(12.0), 7.0);
    }

    #[test]
    fn gaussian_reference_values() {
        let t = sample_gaussian_target(10.0, 0.5, &grid48()).unwrap();
        assert!((t.probs[10] - 0.786565).abs() < 1e-5);
        assert!((t.probs[9] - 0.106455).abs() < 1e-5);
        assert!((t.probs[11] - 0.106455).abs() < 1e-5);
        assert!((t.probs[8] - 2.639e-4).abs() < 1e-5);
        assert!((t.probs[12] - 2.639e-4).abs() < 1e-5);
    }

    #[test]
    fn gaussian_symmetric_about_center() {
        let g = DisparityGrid::new(49, 0, 1).unwrap();
        for sigma in [0.3, 0.5, 1.0, 3.0] {
            let t = sample_gaussian_target(24.0, sigma, &g).unwrap();
            for k in 0..=24 {
                assert_eq!(t.probs[24 + k], t.probs[24 - k]);
            }
        }
    }

    #[test]
    fn gaussian_peak_decreases_with_sigma() {
        let a = sample_gaussian_target(10.0, 0.5, &grid48()).unwrap();
        let b = sample_gaussian_target(10.0, 1.0, &grid48()).unwrap();
        assert!(b.probs[10] < a.probs[10]);
    }

    #[test]
    fn gaussian_far_outside_grid_still_normalized() {
        let t = sample_gaussian_target(-500.0, 0.5, &grid48()).unwrap();
        let s: f64 = t.probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!((t.probs[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_parameters() {
        assert!(sample_gaussian_target(f64::NAN, 0.5, &grid48()).is_err());
        assert!(sample_gaussian_target(1.0, f64::INFINITY, &grid48()).is_err());
        assert!(sample_gaussian_target(1.0, 0.0, &grid48()).is_err());
        assert!(sample_laplacian_target(1.0, -1.0, &grid48()).is_err());
    }

    #[test]
    fn laplacian_reference_values() {
        let t = sample_laplacian_target(10.0, 1.0, &grid48()).unwrap();
        assert!((t.probs[10] - 0.462117).abs() < 1e-5);
        assert!((t.probs[9] - 0.170011).abs() < 1e-5);
        assert!((t.probs[11] - 0.170011).abs() < 1e-5);
    }

    #[test]
    fn laplacian_dirac_limit() {
        let t = sample_laplacian_target(10.0, 0.05, &grid48()).unwrap();
        assert!((t.probs[10] - 1.0).abs() < 1e-6);
        let g = DisparityGrid::new(49, 0, 1).unwrap();
        let s = sample_laplacian_target(24.0, 2.0, &g).unwrap();
        for k in 0..=24 {
            assert_eq!(s.probs[24 + k], s.probs[24 - k]);
        }
    }

    #[test]
    fn expectation_examples() {
        let g = DisparityGrid::new(48, 0, 4).unwrap();
        let mut one_hot = vec![0.0; g.bins()];
        one_hot[3] = 1.0;
        assert_eq!(distribution_expectation(&one_hot, &g).unwrap(), 12.0);

        let g1 = DisparityGrid::new(64, 0, 1).unwrap();
        let mut two = vec![0.0; 64];
        two[10] = 0.5;
        two[50] = 0.5;
        assert_eq!(distribution_expectation(&two, &g1).unwrap(), 30.0);

        let ext = DisparityGrid::new(48, 16, 1).unwrap();
        let t = sample_gaussian_target(ext.bin_coord(20.0), 0.5, &ext).unwrap();
        assert!((distribution_expectation(&t.probs, &ext).unwrap() - 20.0).abs() < 1e-6);

        assert!(distribution_expectation(&[0.5, 0.5], &g).is_err());
        assert!(distribution_expectation(&[0.1; 12], &g).is_err());
    }

    #[test]
    fn truncation_reference_value() {
        let r = truncation_analysis(0.0, 0.5, 0, 47).unwrap();
        assert!((r.expectation_shift - 0.119759).abs() < 1e-6);
        assert!(r.mass_deficit > 0.0);
    }

    #[test]
    fn truncation_symmetric_is_zero() {
        let r = truncation_analysis(20.0, 0.7, 0, 40).unwrap();
        assert_eq!(r.expectation_shift, 0.0);
        let r = truncation_analysis(20.5, 1.3, 0, 41).unwrap();
        assert_eq!(r.expectation_shift, 0.0);
    }

    #[test]
    fn truncation_shift_sign_at_ends() {
        for sigma in [0.5, 1.0, 2.0] {
            assert!(truncation_analysis(0.0, sigma, 0, 47).unwrap().expectation_shift > 0.0);
            assert!(truncation_analysis(47.0, sigma, 0, 47).unwrap().expectation_shift < 0.0);
        }
    }

    #[test]
    fn truncation_decays_away_from_endpoint() {
        let shifts: Vec<f64> = (0..=5)
            .map(|mu| truncation_analysis(mu as f64, 0.5, 0, 47).unwrap().expectation_shift)
            .collect();
        for w in shifts.windows(2) {
            assert!(w[1].abs() < w[0].abs(), "{shifts:?}");
        }
    }

    #[test]
    fn truncation_argument_validation() {
        assert!(truncation_analysis(0.0, 0.5, 5, 5).is_err());
        assert!(truncation_analysis(0.0, -0.5, 0, 5).is_err());
    }

    #[test]
    fn target_field_index_arithmetic() {
        let grid = DisparityGrid::new(48, 16, 4).unwrap();
        let gt = DisparityMap::filled(3, 2, 12.0);
        let f = build_target_field(&gt, 0.5, &grid).unwrap();
        assert_eq!(f.valid_count(), 6);
        for pixel in 0..6 {
            let p = f.pixel_probs(pixel);
            let peak = (0..p.len()).max_by(|a, b| p[*a].total_cmp(&p[*b])).unwrap();
            assert_eq!(peak, 7);
            assert!((p[6] - p[8]).abs() < 1e-15);
        }
    }

    #[test]
    fn target_field_stride_one_peak() {
        let grid = DisparityGrid::new(48, 16, 1).unwrap();
        let gt = DisparityMap::filled(1, 1, 20.0);
        let f = build_target_field(&gt, 0.5, &grid).unwrap();
        assert!((f.pixel_probs(0)[36] - 0.786565).abs() < 1e-5);
    }

    #[test]
    fn target_field_invalid_and_out_of_range() {
        let grid = DisparityGrid::new(48, 16, 4).unwrap();
        let mut gt = DisparityMap::filled(2, 2, 5.0);
        gt.valid = vec![false; 4];
        let f = build_target_field(&gt, 0.5, &grid).unwrap();
        assert_eq!(f.valid_count(), 0);
        assert_eq!(f.out_of_range, 0);

        let mut gt = DisparityMap::filled(2, 1, 5.0);
        gt.values[1] = 64.5;
        let f = build_target_field(&gt, 0.5, &grid).unwrap();
        assert_eq!(f.valid, vec![true, false]);
        assert_eq!(f.out_of_range, 1);
    }
}
