//! Synthetic random-dot stereo pairs with known disparity.
//!
//! The right image is the texture source. The left image samples it at
//! `x - d(x, y)` with linear interpolation, so wherever a pixel is valid
//! `left(x, y) == right(x - gt(x, y), y)` up to the added noise. Pixels that
//! fall out of frame or are hidden behind a nearer surface are marked
//! invalid and refilled with fresh noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Split;
use crate::error::{Error, Result};
use crate::regression::DisparityMap;

/// Period of the repeated-texture band, in pixels.
pub const REPEAT_PERIOD: usize = 12;

/// Row-major grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoSample {
    pub left: Image,
    pub right: Image,
    pub gt: DisparityMap,
    /// Rows covered by a repeated-texture band, if any.
    pub repeated_rows: Option<(usize, usize)>,
}

impl StereoSample {
    pub fn new(left: Image, right: Image, gt: DisparityMap) -> Result<Self> {
        if (left.width, left.height) != (right.width, right.height)
            || (left.width, left.height) != (gt.width, gt.height)
        {
            return Err(Error::invalid("left, right and ground truth sizes differ"));
        }
        Ok(StereoSample {
            left,
            right,
            gt,
            repeated_rows: None,
        })
    }

    pub fn width(&self) -> usize {
        self.left.width
    }

    pub fn height(&self) -> usize {
        self.left.height
    }
}

/// Disparity layout of a generated scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SceneKind {
    Split(Split),
    /// A single fronto-parallel plane at the given disparity.
    Plane(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub d_max: usize,
    pub noise: f64,
    pub kind: SceneKind,
}

struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Rect {
        let rw = rng.random_range(w / 6..=w / 2).max(2);
        let rh = rng.random_range(h / 4..=h / 2).max(2);
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        Rect {
            x0,
            y0,
            x1: x0 + rw,
            y1: y0 + rh,
        }
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

fn disparity_field(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, bool) {
    let (w, h) = (cfg.width, cfg.height);
    let cap = (cfg.d_max as f64 - 1.0).min(30.0);
    let split = match cfg.kind {
        SceneKind::Plane(d) => return (vec![d; w * h], false),
        SceneKind::Split(s) => s,
    };
    let (bg, front, slant_base, slope, hi, band) = match split {
        Split::Endpoint => (
            rng.random_range(0.0..1.5),
            (0.0, 4.0),
            rng.random_range(0.0..3.0),
            0.05,
            3.99,
            false,
        ),
        Split::Standard | Split::Ambiguous => {
            let bg = if rng.random_bool(0.25) {
                rng.random_range(0.0..3.0)
            } else {
                rng.random_range(2.0..24.0)
            };
            let band = split == Split::Ambiguous || rng.random_bool(0.3);
            (bg, (2.0, 10.0), rng.random_range(4.0..24.0), 0.15, cap, band)
        }
    };
    let mut d = vec![bg; w * h];
    let slant = Rect::random(rng, w, h);
    let (bx, by) = (rng.random_range(-slope..slope), rng.random_range(-slope..slope));
    let (cx, cy) = ((slant.x0 + slant.x1) as f64 / 2.0, (slant.y0 + slant.y1) as f64 / 2.0);
    for y in slant.y0..slant.y1 {
        for x in slant.x0..slant.x1 {
            d[y * w + x] = slant_base + bx * (x as f64 - cx) + by * (y as f64 - cy);
        }
    }
    let planes = rng.random_range(1..=3);
    for _ in 0..planes {
        let r = Rect::random(rng, w, h);
        let value = if split == Split::Endpoint {
            rng.random_range(front.0..front.1)
        } else {
            bg + rng.random_range(front.0..front.1)
        };
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                if r.contains(x, y) {
                    d[y * w + x] = value;
                }
            }
        }
    }
    for v in d.iter_mut() {
        *v = v.clamp(0.0, hi);
    }
    (d, band)
}

/// Generates one scene, deterministic in `seed`.
pub fn generate_stereo_sample(cfg: &SceneConfig, seed: u64) -> Result<StereoSample> {
    let (w, h) = (cfg.width, cfg.height);
    if w < 2 || h < 2 {
        return Err(Error::invalid(format!("image {w}x{h} is too small")));
    }
    if cfg.d_max < 8 {
        return Err(Error::invalid(format!("d_max must be at least 8, got {}", cfg.d_max)));
    }
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(Error::invalid(format!("noise must be non-negative, got {}", cfg.noise)));
    }
    if let SceneKind::Plane(d) = cfg.kind {
        if !(d.is_finite() && d >= 0.0 && d < cfg.d_max as f64) {
            return Err(Error::invalid(format!(
                "plane disparity {d} outside [0, {})",
                cfg.d_max
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (disp, band) = disparity_field(cfg, &mut rng);

    let mut right: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
    let repeated_rows = band.then(|| {
        let rows = (h / 3).max(1);
        let y0 = rng.random_range(0..=h - rows);
        let pattern: Vec<f64> = (0..REPEAT_PERIOD * rows).map(|_| rng.random()).collect();
        for y in y0..y0 + rows {
            for x in 0..w {
                right[y * w + x] = pattern[(y - y0) * REPEAT_PERIOD + x % REPEAT_PERIOD];
            }
        }
        (y0, y0 + rows)
    });

    let mut left = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        let row = &disp[y * w..(y + 1) * w];
        let mut nearest_right = f64::INFINITY;
        for x in (0..w).rev() {
            let xr = x as f64 - row[x];
            let occluded = nearest_right < xr;
            nearest_right = nearest_right.min(xr);
            if xr < 0.0 || occluded {
                left[y * w + x] = rng.random();
                continue;
            }
            let x0 = xr.floor() as usize;
            let t = xr - x0 as f64;
            let a = right[y * w + x0];
            left[y * w + x] = if t == 0.0 {
                a
            } else {
                (1.0 - t) * a + t * right[y * w + x0 + 1]
            };
            valid[y * w + x] = true;
        }
    }

    if cfg.noise > 0.0 {
        for v in left.iter_mut().chain(right.iter_mut()) {
            *v = (*v + rng.random_range(-cfg.noise..=cfg.noise)).clamp(0.0, 1.0);
        }
    }

    Ok(StereoSample {
        left: Image::new(w, h, left)?,
        right: Image::new(w, h, right)?,
        gt: DisparityMap {
            width: w,
            height: h,
            values: disp,
            valid,
        },
        repeated_rows,
    })
}

/// Sum of absolute differences over a `(2r+1)^2` window for integer
/// disparities `0..max_d`. Window taps outside either image are skipped;
/// disparities whose window is entirely out of frame get `+inf`.
pub fn sad_cost_column(left: &Image, right: &Image, x: usize, y: usize, radius: usize, max_d: usize) -> Vec<f64> {
    let r = radius as isize;
    (0..max_d)
        .map(|d| {
            let mut total = 0.0;
            let mut taps = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xl) = (y as isize + dy, x as isize + dx);
                    let xr = xl - d as isize;
                    if yy < 0 || yy >= left.height as isize || xl < 0 || xl >= left.width as isize || xr < 0 {
                        continue;
                    }
                    total += (left.get(xl as usize, yy as usize) - right.get(xr as usize, yy as usize)).abs();
                    taps += 1;
                }
            }
            if taps == 0 {
                f64::INFINITY
            } else {
                total / taps as f64
            }
        })
        .collect()
}

/// Indices of strict interior local minima.
pub fn local_minima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] < values[i - 1] && values[i] < values[i + 1])
        .collect()
}

/// A reproducible set of scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub scene: SceneConfig,
    pub seeds: Vec<u64>,
    pub samples: Vec<StereoSample>,
}

/// Seed of the `index`-th sample of a stream. Training and evaluation use
/// different streams, so their scenes never coincide.
pub fn sample_seed(base: u64, stream: u64, index: usize) -> u64 {
    let mut z = base
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(index as u64);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub const TRAIN_STREAM: u64 = 1;
pub const EVAL_STREAM: u64 = 2;

impl Dataset {
    pub fn generate(scene: SceneConfig, count: usize, base_seed: u64, stream: u64) -> Result<Self> {
        let seeds: Vec<u64> = (0..count).map(|i| sample_seed(base_seed, stream, i)).collect();
        let samples = seeds
            .iter()
            .map(|s| generate_stereo_sample(&scene, *s))
            .collect::<Result<_>>()?;
        Ok(Dataset { scene, seeds, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(kind: SceneKind, noise: f64) -> SceneConfig {
        SceneConfig {
            width: 64,
            height: 32,
            d_max: 48,
            noise,
            kind,
        }
    }

    #[test]
    fn plane_is_an_exact_shift() {
        let s = generate_stereo_sample(&scene(SceneKind::Plane(8.0), 0.0), 3).unwrap();
        let mut checked = 0;
        for y in 0..s.height() {
            for x in 0..s.width() {
                if s.gt.is_valid(x, y) {
                    assert_eq!(s.left.get(x, y), s.right.get(x - 8, y));
                    checked += 1;
                } else {
                    assert!(x < 8);
                }
            }
        }
        assert_eq!(checked, (64 - 8) * 32);
    }

    #[test]
    fn same_seed_same_sample() {
        for split in Split::ALL {
            let cfg = scene(SceneKind::Split(split), 0.02);
            let a = generate_stereo_sample(&cfg, 17).unwrap();
            let b = generate_stereo_sample(&cfg, 17).unwrap();
            assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
            let c = generate_stereo_sample(&cfg, 18).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn valid_pixels_reconstruct() {
        let s = generate_stereo_sample(&scene(SceneKind::Split(Split::Standard), 0.0), 5).unwrap();
        for y in 0..s.height() {
            for x in 0..s.width() {
                if !s.gt.is_valid(x, y) {
                    continue;
                }
                let d = s.gt.get(x, y);
                assert!((0.0..48.0).contains(&d));
                let xr = x as f64 - d;
                let x0 = xr.floor() as usize;
                let t = xr - x0 as f64;
                let r = if t == 0.0 {
                    s.right.get(x0, y)
                } else {
                    (1.0 - t) * s.right.get(x0, y) + t * s.right.get(x0 + 1, y)
                };
                assert!((s.left.get(x, y) - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn endpoint_split_stays_low() {
        for seed in 0..10 {
            let s = generate_stereo_sample(&scene(SceneKind::Split(Split::Endpoint), 0.0), seed).unwrap();
            assert!(s.gt.values.iter().all(|d| (0.0..4.0).contains(d)));
        }
    }

    #[test]
    fn repeated_band_gives_multiple_sad_minima() {
        let s = generate_stereo_sample(&scene(SceneKind::Split(Split::Ambiguous), 0.0), 2).unwrap();
        let (y0, y1) = s.repeated_rows.unwrap();
        let mut found = false;
        'outer: for y in y0 + 2..y1.saturating_sub(2) {
            for x in 40..60 {
                let col = sad_cost_column(&s.left, &s.right, x, y, 2, 40);
                let minima: Vec<usize> = local_minima(&col).into_iter().filter(|&i| col[i] < 0.05).collect();
                if minima.len() >= 2 {
                    found = true;
                    break 'outer;
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn occluded_pixels_are_invalid() {
        let s = generate_stereo_sample(&scene(SceneKind::Split(Split::Standard), 0.0), 9).unwrap();
        for y in 0..s.height() {
            let mut nearest = f64::INFINITY;
            for x in (0..s.width()).rev() {
                let xr = x as f64 - s.gt.get(x, y);
                if nearest < xr {
                    assert!(!s.gt.is_valid(x, y));
                }
                nearest = nearest.min(xr);
            }
        }
    }

    #[test]
    fn stream_seeds_are_disjoint() {
        let a: Vec<u64> = (0..100).map(|i| sample_seed(0, TRAIN_STREAM, i)).collect();
        let b: Vec<u64> = (0..100).map(|i| sample_seed(0, EVAL_STREAM, i)).collect();
        assert!(a.iter().all(|s| !b.contains(s)));
    }
}
