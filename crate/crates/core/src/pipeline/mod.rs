//! Desk-scale stereo experiment: synthetic scenes, patch-correlation cost,
//! a small convolutional refiner trained against distribution targets,
//! evaluation metrics and ablation sweeps.

pub mod ablation;
pub mod config;
pub mod data;
pub mod features;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod train;

pub use ablation::{run_ablation, AblationAxis, AblationRun, AblationSummary, AblationTable};
pub use config::{LossMode, Split, TrainConfig, UpsampleMode};
pub use data::{generate_stereo_sample, Dataset, Image, SceneConfig, SceneKind, StereoSample};
pub use features::compute_matching_cost;
pub use metrics::{compute_metrics, Metrics};
pub use model::RefinerModel;
pub use optim::AdamW;
pub use train::{
    evaluate, predict, run_experiment, train, train_observed, EpochRecord, RunResult, StepRecord, TrainOutcome,
};

/// Downsampling factor between the images and the cost volume.
pub const FEATURE_SCALE: usize = 4;

/// Single-line `key=value` rendering of a config, for diagnostics.
pub fn config_summary(cfg: &TrainConfig) -> String {
    cfg.to_pairs()
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}
