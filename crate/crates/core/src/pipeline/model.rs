use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::PATCH_CHANNELS;
use crate::autodiff::{NodeId, Parameter, Tape};
use crate::error::{Error, Result};

/// Gain applied to the raw cost so that the skip path sees cosine
/// similarities scaled to a useful logit range.
pub const SKIP_GAIN: f64 = 4.0 * PATCH_CHANNELS as f64;

pub const MID_DILATION: usize = 2;

/// Three 3x3 convolutions over the disparity-bin channels of a
/// quarter-resolution cost volume, the middle one dilated by
/// [`MID_DILATION`], added to a fixed-gain skip of the cost:
/// `logits = SKIP_GAIN * c + conv3(relu(conv2(relu(conv1(PATCH_CHANNELS * c)))))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerModel {
    pub bins: usize,
    pub hidden: usize,
    pub params: Vec<Parameter>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl RefinerModel {
    pub fn new(bins: usize, hidden: usize, seed: u64) -> Result<Self> {
        if bins < 2 || hidden == 0 {
            return Err(Error::invalid(format!(
                "refiner needs bins >= 2 and hidden >= 1, got {bins}, {hidden}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = (6.0 / (bins * 9) as f64).sqrt();
        let b2 = (6.0 / (hidden * 9) as f64).sqrt();
        let b3 = 0.1 * b2;
        let params = vec![
            Parameter::new(
                "conv1.weight",
                vec![hidden, bins, 3, 3],
                uniform(&mut rng, hidden * bins * 9, b1),
            ),
            Parameter::new("conv1.bias", vec![hidden], vec![0.0; hidden]),
            Parameter::new(
                "conv2.weight",
                vec![hidden, hidden, 3, 3],
                uniform(&mut rng, hidden * hidden * 9, b2),
            ),
            Parameter::new("conv2.bias", vec![hidden], vec![0.0; hidden]),
            Parameter::new(
                "conv3.weight",
                vec![bins, hidden, 3, 3],
                uniform(&mut rng, bins * hidden * 9, b3),
            ),
            Parameter::new("conv3.bias", vec![bins], vec![0.0; bins]),
        ];
        Ok(RefinerModel { bins, hidden, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Builds the logit volume `[bins, h, w]` from a cost node of the same
    /// shape. `ids` are the tape leaves of `self.params`, in order.
    pub fn forward(&self, tape: &mut Tape, ids: &[NodeId], cost: NodeId) -> NodeId {
        let x = tape.scale(cost, PATCH_CHANNELS as f64);
        let h = tape.conv2d(x, ids[0], Some(ids[1]));
        let h = tape.relu(h);
        let h = tape.conv2d_dilated(h, ids[2], Some(ids[3]), MID_DILATION);
        let h = tape.relu(h);
        let r = tape.conv2d(h, ids[4], Some(ids[5]));
        let skip = tape.scale(cost, SKIP_GAIN);
        tape.add(skip, r)
    }
}
