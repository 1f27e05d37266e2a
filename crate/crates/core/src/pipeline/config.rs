use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::DisparityGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossMode {
    /// Smooth-L1 on the soft-argmax estimate against the ground truth.
    SmoothL1SoftArgmax,
    Ce,
    L1,
    L1Cos,
}

impl LossMode {
    pub const ALL: [LossMode; 4] = [
        LossMode::SmoothL1SoftArgmax,
        LossMode::Ce,
        LossMode::L1,
        LossMode::L1Cos,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::SmoothL1SoftArgmax => "smooth_l1_softargmax",
            LossMode::Ce => "ce",
            LossMode::L1 => "l1",
            LossMode::L1Cos => "l1_cos",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpsampleMode {
    /// Spatial-only upsampling; the disparity axis keeps the coarse grid.
    Bilinear,
    /// Spatial and disparity upsampling to a unit-stride grid.
    Trilinear,
}

impl UpsampleMode {
    pub const ALL: [UpsampleMode; 2] = [UpsampleMode::Bilinear, UpsampleMode::Trilinear];

    pub fn as_str(self) -> &'static str {
        match self {
            UpsampleMode::Bilinear => "bilinear",
            UpsampleMode::Trilinear => "trilinear",
        }
    }
}

/// Which synthetic scene family a split is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Standard,
    /// Every scene carries a repeated-texture band.
    Ambiguous,
    /// Disparities concentrated in `[0, 4)`.
    Endpoint,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Standard, Split::Ambiguous, Split::Endpoint];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Standard => "standard",
            Split::Ambiguous => "ambiguous",
            Split::Endpoint => "endpoint",
        }
    }
}

macro_rules! impl_text {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                <$t>::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| {
                        let names: Vec<&str> = <$t>::ALL.iter().map(|v| v.as_str()).collect();
                        format!("unknown {} {s:?}, expected one of {}", $what, names.join(", "))
                    })
            }
        }
    };
}

impl_text!(LossMode, "loss mode");
impl_text!(UpsampleMode, "upsample mode");
impl_text!(Split, "split");

/// Every knob of a training run. All fields are required in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Target spread, in bins of the supervised grid.
    pub sigma: f64,
    /// Weight of the cosine term in `l1_cos` mode.
    pub lambda: f64,
    pub d_max: usize,
    pub d_ext: usize,
    pub stride: usize,
    pub loss_mode: LossMode,
    pub upsample_mode: UpsampleMode,
    pub lr: f64,
    /// Epochs at which the learning rate is multiplied by `lr_gamma`.
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    /// Stop once an epoch's mean training loss is at or below this value.
    pub loss_threshold: Option<f64>,
    pub height: usize,
    pub width: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub train_split: Split,
    pub eval_split: Split,
    /// Hidden channels of the refiner.
    pub hidden: usize,
    /// Amplitude of the uniform image noise added during synthesis.
    pub noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 0.5,
            lambda: 0.5,
            d_max: 48,
            d_ext: 16,
            stride: 4,
            loss_mode: LossMode::L1Cos,
            upsample_mode: UpsampleMode::Bilinear,
            lr: 1e-3,
            lr_milestones: vec![10],
            lr_gamma: 0.5,
            epochs: 15,
            seed: 0,
            batch_size: 4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-2,
            adam_eps: 1e-8,
            loss_threshold: None,
            height: 32,
            width: 64,
            train_samples: 256,
            eval_samples: 16,
            train_split: Split::Standard,
            eval_split: Split::Standard,
            hidden: 16,
            noise: 0.02,
        }
    }
}

/// Config keys in file order.
pub const CONFIG_KEYS: [&str; 26] = [
    "sigma",
    "lambda",
    "d_max",
    "d_ext",
    "stride",
    "loss_mode",
    "upsample_mode",
    "lr",
    "lr_milestones",
    "lr_gamma",
    "epochs",
    "seed",
    "batch_size",
    "beta1",
    "beta2",
    "weight_decay",
    "adam_eps",
    "loss_threshold",
    "height",
    "width",
    "train_samples",
    "eval_samples",
    "train_split",
    "eval_split",
    "hidden",
    "noise",
];

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value {value:?} for {key}: {e}"))
}

impl TrainConfig {
    /// `(key, value)` pairs in [`CONFIG_KEYS`] order, formatted so that
    /// [`TrainConfig::set`] reproduces the same config.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let milestones: Vec<String> = self.lr_milestones.iter().map(|m| m.to_string()).collect();
        vec![
            ("sigma", self.sigma.to_string()),
            ("lambda", self.lambda.to_string()),
            ("d_max", self.d_max.to_string()),
            ("d_ext", self.d_ext.to_string()),
            ("stride", self.stride.to_string()),
            ("loss_mode", self.loss_mode.to_string()),
            ("upsample_mode", self.upsample_mode.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_milestones", milestones.join(",")),
            ("lr_gamma", self.lr_gamma.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            (
                "loss_threshold",
                self.loss_threshold
                    .map_or_else(|| "none".to_string(), |t| t.to_string()),
            ),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("train_samples", self.train_samples.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("train_split", self.train_split.to_string()),
            ("eval_split", self.eval_split.to_string()),
            ("hidden", self.hidden.to_string()),
            ("noise", self.noise.to_string()),
        ]
    }

    /// Sets one field from its text form. Unknown keys and malformed values
    /// return a message suitable for a config error.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "sigma" => self.sigma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "d_max" => self.d_max = parse(key, value)?,
            "d_ext" => self.d_ext = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "loss_mode" => self.loss_mode = parse(key, value)?,
            "upsample_mode" => self.upsample_mode = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_milestones" => {
                self.lr_milestones = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|m| parse(key, m.trim()))
                        .collect::<std::result::Result<_, _>>()?
                }
            }
            "lr_gamma" => self.lr_gamma = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "loss_threshold" => {
                self.loss_threshold = if value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "train_samples" => self.train_samples = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "train_split" => self.train_split = parse(key, value)?,
            "eval_split" => self.eval_split = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// The coarse grid the cost volume is built on.
    pub fn grid(&self) -> Result<DisparityGrid> {
        DisparityGrid::new(self.d_max, self.d_ext, self.stride)
    }

    /// The grid the output distribution lives on after upsampling.
    pub fn output_grid(&self) -> Result<DisparityGrid> {
        let grid = self.grid()?;
        match self.upsample_mode {
            UpsampleMode::Bilinear => Ok(grid),
            UpsampleMode::Trilinear => grid.refined(self.stride),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma", self.sigma),
            ("lr", self.lr),
            ("lr_gamma", self.lr_gamma),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("weight_decay", self.weight_decay),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if let Some(t) = self.loss_threshold {
            if !t.is_finite() {
                return Err(Error::invalid("loss_threshold must be finite"));
            }
        }
        if self.d_max < 8 {
            return Err(Error::invalid(format!("d_max must be at least 8, got {}", self.d_max)));
        }
        if !self.stride.is_multiple_of(super::FEATURE_SCALE) || !self.d_ext.is_multiple_of(super::FEATURE_SCALE) {
            return Err(Error::invalid(format!(
                "stride and d_ext must be multiples of the feature scale {}",
                super::FEATURE_SCALE
            )));
        }
        let block = self.stride * super::FEATURE_SCALE;
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(block)
            || !self.width.is_multiple_of(block)
        {
            return Err(Error::invalid(format!(
                "image size {}x{} must be a positive multiple of {block}",
                self.width, self.height
            )));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("train_samples", self.train_samples),
            ("eval_samples", self.eval_samples),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        self.grid()?;
        Ok(())
    }
}
