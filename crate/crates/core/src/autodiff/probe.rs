//! One small scalar test function per op kind, each with an independent
//! double-double reference evaluator for finite-difference checks.
//!
//! A probe feeds a 48-entry vector (reshaped as the op needs) plus seeded
//! auxiliary leaves through the op, then reduces the output with seeded
//! positive weights. All leaves are variables, so the checked gradient
//! covers every differentiable operand.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;

use super::check::{central_difference_dd, relative_error};
use super::dd::{self, dd};
use super::{NodeId, OpKind, Tape, Tensor};
use crate::costvolume::ResamplePlan;
use crate::distributions::DisparityGrid;

/// Length of the primary probe input.
pub const PROBE_LEN: usize = 48;

pub const ALL_KINDS: [OpKind; 20] = [
    OpKind::Input,
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Scale,
    OpKind::Relu,
    OpKind::Abs,
    OpKind::Log,
    OpKind::Sqrt,
    OpKind::Recip,
    OpKind::SmoothL1,
    OpKind::Sum,
    OpKind::MeanAbs,
    OpKind::SumBins,
    OpKind::DotBins,
    OpKind::NormBins,
    OpKind::Softmax,
    OpKind::WeightedIndexSum,
    OpKind::Conv2d,
    OpKind::Resample,
];

const OFFSET: f64 = 0.25;
const SCALE: f64 = 1.7;
const BIN_ROWS: [usize; 2] = [12, 4];
const VOLUME: [usize; 3] = [3, 4, 4];
const CONV_OUT: usize = 2;

fn index_weights() -> Vec<f64> {
    (0..BIN_ROWS[0]).map(|i| 4.0 * i as f64).collect()
}

pub struct Probe {
    kind: OpKind,
    shapes: Vec<Vec<usize>>,
    aux: Vec<f64>,
    weights: Vec<f64>,
    out_shape: Vec<usize>,
    plan: Option<(Rc<ResamplePlan>, Vec<f64>)>,
    /// Conv2d probes alternate between dilation 1 and 2 by seed.
    dilation: usize,
}

impl Probe {
    pub fn new(kind: OpKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let shapes: Vec<Vec<usize>> = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul => vec![vec![PROBE_LEN], vec![PROBE_LEN]],
            OpKind::DotBins => vec![BIN_ROWS.to_vec(), BIN_ROWS.to_vec()],
            OpKind::SumBins | OpKind::NormBins | OpKind::Softmax | OpKind::WeightedIndexSum => {
                vec![BIN_ROWS.to_vec()]
            }
            OpKind::Conv2d => vec![VOLUME.to_vec(), vec![CONV_OUT, VOLUME[0], 3, 3], vec![CONV_OUT]],
            OpKind::Resample => vec![VOLUME.to_vec()],
            _ => vec![vec![PROBE_LEN]],
        };
        let aux_len: usize = shapes[1..].iter().map(|s| s.iter().product::<usize>()).sum();
        let aux = (0..aux_len)
            .map(|_| {
                let m: f64 = rng.random_range(0.5..1.5);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let plan = (kind == OpKind::Resample).then(|| {
            let plan = ResamplePlan::trilinear(VOLUME[0], VOLUME[1], VOLUME[2], 2);
            let n_in = VOLUME.iter().product::<usize>();
            let mut dense = Vec::new();
            let mut unit = vec![0.0; n_in];
            for i in 0..n_in {
                unit[i] = 1.0;
                dense.push(plan.forward(&unit));
                unit[i] = 0.0;
            }
            let n_out = dense[0].len();
            let mut rows = vec![0.0; n_out * n_in];
            for (i, col) in dense.iter().enumerate() {
                for (o, v) in col.iter().enumerate() {
                    rows[o * n_in + i] = *v;
                }
            }
            (Rc::new(plan), rows)
        });
        let mut probe = Probe {
            kind,
            shapes,
            aux,
            weights: Vec::new(),
            out_shape: Vec::new(),
            plan,
            dilation: 1 + (seed % 2) as usize,
        };
        let mut tape = Tape::new();
        let x = probe.point(&[0.5; PROBE_LEN]);
        let leaves = probe.leaves(&mut tape, &x);
        let y = probe.output(&mut tape, &leaves);
        probe.out_shape = tape.value(y).shape.clone();
        let n_out = tape.value(y).numel();
        probe.weights = (0..n_out).map(|_| rng.random_range(0.5..1.5)).collect();
        probe
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    /// Full variable vector: `primary` followed by the auxiliary leaves.
    pub fn point(&self, primary: &[f64]) -> Vec<f64> {
        assert_eq!(primary.len(), PROBE_LEN, "probe input must have {PROBE_LEN} entries");
        let mut x = primary.to_vec();
        x.extend_from_slice(&self.aux);
        x
    }

    fn leaves(&self, tape: &mut Tape, x: &[f64]) -> Vec<NodeId> {
        let mut offset = 0;
        self.shapes
            .iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let t = Tensor::new(shape.clone(), x[offset..offset + n].to_vec());
                offset += n;
                tape.variable(t)
            })
            .collect()
    }

    fn output(&self, tape: &mut Tape, l: &[NodeId]) -> NodeId {
        let shifted_square = |tape: &mut Tape, x: NodeId| {
            let sq = tape.mul(x, x);
            let c = tape.constant(Tensor::new(vec![PROBE_LEN], vec![OFFSET; PROBE_LEN]));
            tape.add(sq, c)
        };
        match self.kind {
            OpKind::Input => l[0],
            OpKind::Add => tape.add(l[0], l[1]),
            OpKind::Sub => tape.sub(l[0], l[1]),
            OpKind::Mul => tape.mul(l[0], l[1]),
            OpKind::Scale => tape.scale(l[0], SCALE),
            OpKind::Relu => tape.relu(l[0]),
            OpKind::Abs => tape.abs(l[0]),
            OpKind::Log => {
                let s = shifted_square(tape, l[0]);
                tape.log(s, 1e-12)
            }
            OpKind::Sqrt => {
                let s = shifted_square(tape, l[0]);
                tape.sqrt(s)
            }
            OpKind::Recip => {
                let s = shifted_square(tape, l[0]);
                tape.recip(s)
            }
            OpKind::SmoothL1 => {
                let s = tape.scale(l[0], 2.0);
                tape.smooth_l1(s)
            }
            OpKind::Sum => tape.sum(l[0]),
            OpKind::MeanAbs => tape.mean_abs(l[0]),
            OpKind::SumBins => tape.sum_bins(l[0]),
            OpKind::DotBins => tape.dot_bins(l[0], l[1]),
            OpKind::NormBins => tape.norm_bins(l[0]),
            OpKind::Softmax => tape.softmax(l[0]),
            OpKind::WeightedIndexSum => tape.weighted_index_sum(l[0], &index_weights()),
            OpKind::Conv2d => tape.conv2d_dilated(l[0], l[1], Some(l[2]), self.dilation),
            OpKind::Resample => {
                let plan = self.plan.as_ref().expect("resample probe has a plan").0.clone();
                tape.resample(l[0], plan)
            }
        }
    }

    fn build(&self, tape: &mut Tape, x: &[f64]) -> (Vec<NodeId>, NodeId) {
        let leaves = self.leaves(tape, x);
        let y = self.output(tape, &leaves);
        let w = tape.constant(Tensor::new(self.out_shape.clone(), self.weights.clone()));
        let weighted = tape.mul(y, w);
        let root = tape.sum(weighted);
        (leaves, root)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let (_, root) = self.build(&mut tape, x);
        tape.value(root).data[0]
    }

    /// Tape gradient with respect to the full variable vector.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let (leaves, root) = self.build(&mut tape, x);
        let grads = tape.backward(root).expect("probe root is scalar");
        let mut out = Vec::with_capacity(x.len());
        for id in leaves {
            match grads.get(id) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, tape.value(id).numel())),
            }
        }
        out
    }

    /// The probe function evaluated independently in double-double.
    pub fn reference(&self, x: &[f64]) -> TwoFloat {
        let x: Vec<TwoFloat> = x.iter().map(|v| dd(*v)).collect();
        let n0: usize = self.shapes[0].iter().product();
        let (a, rest) = x.split_at(n0);
        let y: Vec<TwoFloat> = match self.kind {
            OpKind::Input => a.to_vec(),
            OpKind::Add => a.iter().zip(rest).map(|(p, q)| *p + *q).collect(),
            OpKind::Sub => a.iter().zip(rest).map(|(p, q)| *p - *q).collect(),
            OpKind::Mul => a.iter().zip(rest).map(|(p, q)| *p * *q).collect(),
            OpKind::Scale => a.iter().map(|v| *v * SCALE).collect(),
            OpKind::Relu => a.iter().map(|v| if v.hi() > 0.0 { *v } else { dd(0.0) }).collect(),
            OpKind::Abs => a.iter().map(|v| dd::abs(*v)).collect(),
            OpKind::Log => a.iter().map(|v| dd::ln(*v * *v + OFFSET)).collect(),
            OpKind::Sqrt => a.iter().map(|v| dd::sqrt(*v * *v + OFFSET)).collect(),
            OpKind::Recip => a.iter().map(|v| dd::div(dd(1.0), *v * *v + OFFSET)).collect(),
            OpKind::SmoothL1 => a
                .iter()
                .map(|v| {
                    let e = dd::abs(*v * 2.0);
                    if e.hi() < 1.0 {
                        e * e * 0.5
                    } else {
                        e - 0.5
                    }
                })
                .collect(),
            OpKind::Sum => vec![a.iter().fold(dd(0.0), |s, v| s + *v)],
            OpKind::MeanAbs => vec![dd::div(
                a.iter().fold(dd(0.0), |s, v| s + dd::abs(*v)),
                dd(a.len() as f64),
            )],
            OpKind::SumBins => reduce_bins(a, |_, v| v),
            OpKind::DotBins => reduce_bins(a, |i, v| v * rest[i]),
            OpKind::NormBins => reduce_bins(a, |_, v| v * v).into_iter().map(dd::sqrt).collect(),
            OpKind::Softmax => softmax_dd(a, BIN_ROWS[0]),
            OpKind::WeightedIndexSum => {
                let w = index_weights();
                let n = BIN_ROWS[1];
                reduce_bins(a, |i, v| v * w[i / n])
            }
            OpKind::Conv2d => conv_dd(a, rest, self.dilation),
            OpKind::Resample => {
                let dense = &self.plan.as_ref().expect("resample probe has a plan").1;
                dense
                    .chunks(a.len())
                    .map(|row| row.iter().zip(a).fold(dd(0.0), |s, (w, v)| s + *v * *w))
                    .collect()
            }
        };
        y.iter().zip(&self.weights).fold(dd(0.0), |s, (y, w)| s + *y * *w)
    }

    /// Worst relative error of the tape gradient against a double-double
    /// central difference with step `h`, at the point built from `primary`.
    pub fn check(&self, primary: &[f64], h: f64) -> f64 {
        let x = self.point(primary);
        let fd = central_difference_dd(|v| self.reference(v), &x, h);
        relative_error(&self.gradient(&x), &fd)
    }
}

fn reduce_bins(a: &[TwoFloat], f: impl Fn(usize, TwoFloat) -> TwoFloat) -> Vec<TwoFloat> {
    let n = BIN_ROWS[1];
    let mut out = vec![dd(0.0); n];
    for (i, v) in a.iter().enumerate() {
        out[i % n] += f(i, *v);
    }
    out
}

fn softmax_dd(a: &[TwoFloat], bins: usize) -> Vec<TwoFloat> {
    let n = a.len() / bins;
    let mut out = vec![dd(0.0); a.len()];
    for k in 0..n {
        let top = (0..bins).map(|d| a[d * n + k].hi()).fold(f64::NEG_INFINITY, f64::max);
        let mut total = dd(0.0);
        for d in 0..bins {
            let e = dd::exp(a[d * n + k] - top);
            out[d * n + k] = e;
            total += e;
        }
        for d in 0..bins {
            out[d * n + k] = dd::div(out[d * n + k], total);
        }
    }
    out
}

fn conv_dd(x: &[TwoFloat], params: &[TwoFloat], dilation: usize) -> Vec<TwoFloat> {
    let dil = dilation as isize;
    let [cin, h, w] = VOLUME;
    let (weight, bias) = params.split_at(CONV_OUT * cin * 9);
    let mut out = vec![dd(0.0); CONV_OUT * h * w];
    for co in 0..CONV_OUT {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = bias[co];
                for ci in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (
                                y as isize + (ky as isize - 1) * dil,
                                xx as isize + (kx as isize - 1) * dil,
                            );
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let v = x[(ci * h + sy as usize) * w + sx as usize];
                            acc += v * weight[((co * cin + ci) * 3 + ky) * 3 + kx];
                        }
                    }
                }
                out[(co * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

/// Soft-argmax evaluated in double-double, for checking the closed-form
/// regression gradient.
pub fn soft_argmax_reference(z: &[f64], grid: &DisparityGrid) -> TwoFloat {
    let zz: Vec<TwoFloat> = z.iter().map(|v| dd(*v)).collect();
    let p = softmax_dd(&zz, z.len());
    p.iter()
        .enumerate()
        .fold(dd(0.0), |s, (i, p)| s + *p * grid.bin_value(i))
}

/// `l1_vector(softmax(z), q) + lambda * neg_cosine(softmax(z), q)` in
/// double-double.
pub fn combined_loss_reference(z: &[f64], q: &[f64], lambda: f64) -> TwoFloat {
    let zz: Vec<TwoFloat> = z.iter().map(|v| dd(*v)).collect();
    let p = softmax_dd(&zz, z.len());
    let mut l1 = dd(0.0);
    let (mut dot, mut pp, mut qq) = (dd(0.0), dd(0.0), dd(0.0));
    for (p, q) in p.iter().zip(q) {
        l1 += dd::abs(*p - *q);
        dot += *p * *q;
        pp += *p * *p;
        qq += dd(*q) * *q;
    }
    let l1 = dd::div(l1, dd(z.len() as f64));
    let cos = dd::div(dot, dd::sqrt(pp) * dd::sqrt(qq));
    l1 - cos * lambda
}
