//! Supervision losses.
//!
//! The plain functions evaluate one probability vector against one target.
//! [`graph`] builds the same losses on an autodiff [`Tape`] over whole
//! `[bins, pixels]` fields.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::{distribution_expectation, DisparityGrid};
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Smallest vector norm accepted by [`neg_cosine`].
pub const MIN_NORM: f64 = 1e-12;

pub fn smooth_l1(d: f64, dhat: f64) -> f64 {
    let e = (d - dhat).abs();
    if e < 1.0 {
        0.5 * e * e
    } else {
        e - 0.5
    }
}

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "vector lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::invalid("empty vectors"));
    }
    Ok(())
}

/// `-sum q log p`, with `p` floored at [`LOG_FLOOR`].
pub fn cross_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    Ok(-p.iter().zip(q).map(|(p, q)| q * p.max(LOG_FLOOR).ln()).sum::<f64>())
}

/// Shannon entropy of `q` (natural log), with `0 log 0 = 0`.
pub fn entropy(q: &[f64]) -> f64 {
    -q.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Mean absolute difference.
pub fn l1_vector(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

/// Negative cosine similarity.
pub fn neg_cosine(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if np <= MIN_NORM || nq <= MIN_NORM {
        return Err(Error::invalid("cosine of a zero-norm vector"));
    }
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    Ok(-dot / (np * nq))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub per_term: BTreeMap<String, f64>,
    pub lambda: f64,
}

/// `l1_vector + lambda * neg_cosine`.
pub fn combined_loss(p: &[f64], q: &[f64], lambda: f64) -> Result<LossReport> {
    let l1 = l1_vector(p, q)?;
    let cos = neg_cosine(p, q)?;
    let mut per_term = BTreeMap::new();
    per_term.insert("l1".to_string(), l1);
    per_term.insert("cos".to_string(), cos);
    Ok(LossReport {
        value: l1 + lambda * cos,
        per_term,
        lambda,
    })
}

/// Copies of `q` with `eps` mass moved from its peak bin to `peak + near`
/// and to `peak + far`. Both have the same L1 distance to `q` as long as the
/// receiving bins stay on the grid, but their expectations differ by
/// `eps * (far - near)` bins.
pub fn equal_l1_pair(q: &[f64], eps: f64, near: isize, far: isize) -> Result<(Vec<f64>, Vec<f64>)> {
    let peak = argmax(q);
    let bins = q.len() as isize;
    let (a, b) = (peak as isize + near, peak as isize + far);
    if !(0..bins).contains(&a) || !(0..bins).contains(&b) || near == 0 || far == 0 {
        return Err(Error::invalid(
            "transfer targets must be distinct from the peak and on the grid",
        ));
    }
    if eps <= 0.0 || eps > q[peak] {
        return Err(Error::invalid(format!("transfer mass {eps} not in (0, {}]", q[peak])));
    }
    let mut p_near = q.to_vec();
    p_near[peak] -= eps;
    p_near[a as usize] += eps;
    let mut p_far = q.to_vec();
    p_far[peak] -= eps;
    p_far[b as usize] += eps;
    Ok((p_near, p_far))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Parameters of the perturbation family used by [`loss_landscape_scan`].
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeSpec {
    pub lambda: f64,
    /// Whole-vector shifts `-max_shift..=max_shift` (bins).
    pub max_shift: usize,
    /// Mass transfers from the peak to `peak +- 1..=max_offset`.
    pub max_offset: usize,
    /// Transfer masses, as fractions of the peak mass.
    pub transfer_fractions: Vec<f64>,
    /// Extra rows mixing `q` with seeded random simplex points.
    pub random_rows: usize,
    pub seed: u64,
}

impl Default for LandscapeSpec {
    fn default() -> Self {
        LandscapeSpec {
            lambda: 0.5,
            max_shift: 3,
            max_offset: 6,
            transfer_fractions: vec![0.1, 0.25, 0.5],
            random_rows: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapeRow {
    pub l1: f64,
    pub combined: f64,
    /// `|E[p] - E[q]|` in full-resolution disparity units.
    pub epe: f64,
}

/// Evaluates L1, the combined loss and the expectation error over a fixed,
/// seeded family of unit-mass perturbations of `q`. The first row is always
/// `p = q`.
pub fn loss_landscape_scan(q: &[f64], grid: &DisparityGrid, spec: &LandscapeSpec) -> Result<Vec<LandscapeRow>> {
    let eq = distribution_expectation(q, grid)?;
    let row = |p: &[f64]| -> Result<LandscapeRow> {
        Ok(LandscapeRow {
            l1: l1_vector(p, q)?,
            combined: combined_loss(p, q, spec.lambda)?.value,
            epe: (distribution_expectation(p, grid)? - eq).abs(),
        })
    };
    let bins = q.len() as isize;
    let mut rows = vec![row(q)?];

    for s in -(spec.max_shift as isize)..=spec.max_shift as isize {
        if s == 0 {
            continue;
        }
        let mut p: Vec<f64> = (0..bins)
            .map(|i| {
                let src = i - s;
                if (0..bins).contains(&src) {
                    q[src as usize]
                } else {
                    0.0
                }
            })
            .collect();
        let mass: f64 = p.iter().sum();
        if mass <= MIN_NORM {
            continue;
        }
        p.iter_mut().for_each(|v| *v /= mass);
        rows.push(row(&p)?);
    }

    let peak = argmax(q) as isize;
    for &frac in &spec.transfer_fractions {
        let eps = frac * q[peak as usize];
        for k in 1..=spec.max_offset as isize {
            for dir in [-1, 1] {
                let target = peak + dir * k;
                if !(0..bins).contains(&target) {
                    continue;
                }
                let mut p = q.to_vec();
                p[peak as usize] -= eps;
                p[target as usize] += eps;
                rows.push(row(&p)?);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..spec.random_rows {
        let t: f64 = rng.random();
        let mut r: Vec<f64> = (0..bins).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let total: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= total);
        let mut p: Vec<f64> = q.iter().zip(&r).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let mass: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= mass);
        rows.push(row(&p)?);
    }
    Ok(rows)
}

/// Tape builders for the losses over `[bins, pixels]` probability fields.
/// Each returns a per-pixel `[pixels]` node.
pub mod graph {
    use crate::autodiff::{NodeId, Tape, Tensor};

    use super::LOG_FLOOR;

    pub fn l1_vector(tape: &mut Tape, p: NodeId, q: NodeId) -> NodeId {
        let bins = tape.value(p).shape[0];
        let diff = tape.sub(p, q);
        let abs = tape.abs(diff);
        let total = tape.sum_bins(abs);
        tape.scale(total, 1.0 / bins as f64)
    }

    /// `-<p, q> / (|p| |q|)`. `q` is a constant field, its per-pixel norms
    /// are computed here.
    pub fn neg_cosine(tape: &mut Tape, p: NodeId, q: NodeId) -> NodeId {
        let qv = tape.value(q);
        let bins = qv.shape[0];
        let n = qv.numel() / bins;
        let mut inv_q = vec![0.0; n];
        for d in 0..bins {
            for (k, acc) in inv_q.iter_mut().enumerate() {
                let v = qv.data[d * n + k];
                *acc += v * v;
            }
        }
        for v in inv_q.iter_mut() {
            *v = 1.0 / v.sqrt();
        }
        let rest = qv.shape[1..].to_vec();
        let inv_q = tape.constant(Tensor::new(rest, inv_q));
        let dot = tape.dot_bins(p, q);
        let norm_p = tape.norm_bins(p);
        let inv_p = tape.recip(norm_p);
        let cos = tape.mul(dot, inv_p);
        let cos = tape.mul(cos, inv_q);
        tape.scale(cos, -1.0)
    }

    pub fn combined(tape: &mut Tape, p: NodeId, q: NodeId, lambda: f64) -> NodeId {
        let l1 = l1_vector(tape, p, q);
        let cos = neg_cosine(tape, p, q);
        let cos = tape.scale(cos, lambda);
        tape.add(l1, cos)
    }

    pub fn cross_entropy(tape: &mut Tape, p: NodeId, q: NodeId) -> NodeId {
        let logp = tape.log(p, LOG_FLOOR);
        let prod = tape.mul(q, logp);
        let total = tape.sum_bins(prod);
        tape.scale(total, -1.0)
    }

    /// Smooth-L1 between the soft-argmax of `p` and `gt` (both full-res).
    pub fn smooth_l1_disparity(tape: &mut Tape, p: NodeId, bin_values: &[f64], gt: NodeId) -> NodeId {
        let d = tape.weighted_index_sum(p, bin_values);
        let e = tape.sub(d, gt);
        tape.smooth_l1(e)
    }

    /// `sum(values * mask) / count`, or a constant zero when `count == 0`.
    pub fn masked_mean(tape: &mut Tape, values: NodeId, mask: &[f64]) -> NodeId {
        let count: f64 = mask.iter().sum();
        let shape = tape.value(values).shape.clone();
        let m = tape.constant(Tensor::new(shape, mask.to_vec()));
        let masked = tape.mul(values, m);
        let total = tape.sum(masked);
        tape.scale(total, if count > 0.0 { 1.0 / count } else { 0.0 })
    }
}
