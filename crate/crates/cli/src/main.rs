mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sgstereo::pipeline::{AblationAxis, LossMode, Split, TrainConfig, UpsampleMode};

/// Gaussian-target supervision for soft-argmax stereo: data generation,
/// training, evaluation, ablations and analyses.
///
/// Every command writes its outputs and a manifest.json into --out-dir and
/// prints one tab-separated summary line per run: command, seed, epe, d1
/// (`-` where a command has no metrics). Errors are reported on stderr as a
/// single `error[<kind>]: <message>` line with exit code 1; usage errors
/// exit with code 2.
#[derive(Debug, Parser)]
#[command(name = "sgstereo", version)]
pub struct Cli {
    /// Seed for data generation, model initialization and shuffling.
    /// Overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for all outputs; created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    /// Flat `key = value` config file listing every training field.
    /// Flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic stereo pairs (PGM) with ground truth (PFM + mask).
    GenData {
        /// Number of pairs; defaults to the config's eval_samples.
        #[arg(long)]
        samples: Option<usize>,
        /// Scene family; defaults to the config's eval_split.
        #[arg(long)]
        split: Option<Split>,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Train a refiner, evaluate it and write its history and weights.
    Train {
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Evaluate a trained model and write one PFM prediction per image.
    Eval {
        /// model.json written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Evaluation split; defaults to the one stored with the model.
        #[arg(long)]
        split: Option<Split>,
        /// Number of evaluation pairs; defaults to the stored value.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train and evaluate once per (value, seed) along one config axis.
    Ablate {
        #[arg(long)]
        axis: AblationAxis,
        /// Comma-separated values; defaults to a standard set per axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Comma-separated run seeds. Defaults to `S,S+1,S+2` for --seed S (0).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Independent runs to execute in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Evaluation split; defaults to the split suited to the axis
        /// (ambiguous for loss_mode, endpoint for d_ext, else standard).
        #[arg(long)]
        eval_split: Option<Split>,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Soft-argmax gradient magnitude against distance from the estimate.
    AnalyzeGradient {
        #[arg(long, default_value_t = 48)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = GradientDist::Uniform)]
        dist: GradientDist,
        /// Peak location in bins for gaussian and bimodal (second peak at
        /// `bins - 1 - center`). Defaults to a quarter of the grid.
        #[arg(long)]
        center: Option<f64>,
        /// Spread in bins for gaussian and bimodal.
        #[arg(long, default_value_t = 2.0)]
        spread: f64,
    },
    /// Mass deficit and expectation shift of a truncated sampled Gaussian.
    AnalyzeTruncation {
        /// Target spread; defaults to the config's sigma.
        #[arg(long)]
        sigma: Option<f64>,
        /// Comma-separated target centres.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5")]
        mu: Vec<f64>,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        lo: i64,
        #[arg(long, default_value_t = 47, allow_hyphen_values = true)]
        hi: i64,
    },
    /// L1, combined loss and expectation error over perturbations of a
    /// Gaussian target, plus an equal-L1 pair.
    AnalyzeLandscape {
        /// Ground-truth disparity (full resolution) of the target.
        #[arg(long, default_value_t = 20.0)]
        mu: f64,
        /// Mass moved from the peak for the equal-L1 pair.
        #[arg(long, default_value_t = 0.2)]
        eps: f64,
        /// Bin offsets receiving the mass, near and far.
        #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
        near: isize,
        #[arg(long, default_value_t = 5, allow_hyphen_values = true)]
        far: isize,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Best piecewise-linear fit of a fine Gaussian target from coarse
    /// knots, against an exactly representable ramp.
    AnalyzeUpsample {
        /// Target spread in fine bins; defaults to the config's sigma.
        #[arg(long)]
        sigma: Option<f64>,
        /// Upsampling factor; defaults to the config's stride.
        #[arg(long)]
        factor: Option<usize>,
        /// Fine bins; defaults to the config grid refined by the factor.
        #[arg(long)]
        bins: Option<usize>,
        /// Comma-separated target centres in fine bins. Defaults to one
        /// centre on a knot and one midway between knots.
        #[arg(long, value_delimiter = ',')]
        mu: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradientDist {
    Uniform,
    Gaussian,
    Bimodal,
    /// Logits drawn uniformly from [-3, 3] using --seed.
    Random,
}

/// Training fields settable from the command line. Anything not exposed as
/// a flag can be set with `--set key=value`.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOpts {
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub d_max: Option<usize>,
    #[arg(long)]
    pub d_ext: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub loss_mode: Option<LossMode>,
    #[arg(long)]
    pub upsample_mode: Option<UpsampleMode>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[arg(long)]
    pub train_split: Option<Split>,
    /// Stop when an epoch's mean loss reaches this value.
    #[arg(long, allow_hyphen_values = true)]
    pub loss_threshold: Option<f64>,
    /// Any config field, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl TrainOpts {
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<(), String> {
        macro_rules! put {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                })*
            };
        }
        put!(
            sigma,
            lambda,
            d_max,
            d_ext,
            stride,
            loss_mode,
            upsample_mode,
            lr,
            epochs,
            batch_size,
            weight_decay,
            train_samples,
            eval_samples,
            train_split
        );
        if self.loss_threshold.is_some() {
            cfg.loss_threshold = self.loss_threshold;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects key=value, got {kv:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.kind());
            ExitCode::from(1)
        }
    }
}
