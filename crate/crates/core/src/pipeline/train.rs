use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LossMode, TrainConfig, UpsampleMode};
use super::data::{sample_seed, Dataset, SceneConfig, SceneKind, StereoSample, EVAL_STREAM, TRAIN_STREAM};
use super::features::compute_matching_cost;
use super::metrics::{Metrics, MetricsAccumulator};
use super::model::RefinerModel;
use super::optim::AdamW;
use super::FEATURE_SCALE;
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::costvolume::ResamplePlan;
use crate::distributions::{build_target_field, DisparityGrid};
use crate::error::{Error, Result};
use crate::losses::graph;
use crate::regression::DisparityMap;

const MODEL_STREAM: u64 = 3;
const SHUFFLE_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-step batch losses.
    pub loss: f64,
    /// End-point error of the predictions made during the epoch's forward
    /// passes (before each step's update).
    pub train_epe: f64,
}

/// Reported to the observer after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    /// Mean total-variation distance `0.5 * sum |p - q|` between output and
    /// target distributions over supervised pixels, before the update.
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: RefinerModel,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Per-sample tensors that do not depend on the model.
struct Prepared {
    cost: Tensor,
    target: Tensor,
    mask: Vec<f64>,
    gt: Tensor,
    gt_map: DisparityMap,
}

/// Shapes, grids and interpolation shared by training and inference.
struct Pipeline {
    grid: DisparityGrid,
    out_grid: DisparityGrid,
    plan: Rc<ResamplePlan>,
    bin_values: Vec<f64>,
    height: usize,
    width: usize,
}

impl Pipeline {
    fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let out_grid = cfg.output_grid()?;
        let (hq, wq) = (cfg.height / FEATURE_SCALE, cfg.width / FEATURE_SCALE);
        let plan = match cfg.upsample_mode {
            UpsampleMode::Bilinear => ResamplePlan::bilinear(grid.bins(), hq, wq, FEATURE_SCALE),
            UpsampleMode::Trilinear => {
                if cfg.stride != FEATURE_SCALE {
                    return Err(Error::invalid(format!(
                        "trilinear upsampling needs stride {FEATURE_SCALE}, got {}",
                        cfg.stride
                    )));
                }
                ResamplePlan::trilinear(grid.bins(), hq, wq, FEATURE_SCALE)
            }
        };
        debug_assert_eq!(plan.out_dims(), (out_grid.bins(), cfg.height, cfg.width));
        Ok(Pipeline {
            bin_values: out_grid.bin_values(),
            grid,
            out_grid,
            plan: Rc::new(plan),
            height: cfg.height,
            width: cfg.width,
        })
    }

    fn cost_tensor(&self, sample: &StereoSample) -> Result<Tensor> {
        if (sample.width(), sample.height()) != (self.width, self.height) {
            return Err(Error::invalid(format!(
                "sample is {}x{}, config expects {}x{}",
                sample.width(),
                sample.height(),
                self.width,
                self.height
            )));
        }
        let v = compute_matching_cost(sample, &self.grid)?;
        Ok(Tensor::new(vec![v.bins(), v.height, v.width], v.data))
    }

    fn prepare(&self, sample: &StereoSample, sigma: f64) -> Result<Prepared> {
        let field = build_target_field(&sample.gt, sigma, &self.out_grid)?;
        let mask: Vec<f64> = field.valid.iter().map(|v| f64::from(u8::from(*v))).collect();
        let gt: Vec<f64> = sample
            .gt
            .values
            .iter()
            .zip(&field.valid)
            .map(|(g, ok)| if *ok { *g } else { 0.0 })
            .collect();
        Ok(Prepared {
            cost: self.cost_tensor(sample)?,
            target: Tensor::new(vec![self.out_grid.bins(), self.height, self.width], field.probs),
            mask,
            gt: Tensor::new(vec![self.height, self.width], gt),
            gt_map: sample.gt.clone(),
        })
    }

    /// Output distribution `p` as `[bins, H, W]`.
    fn distribution(&self, tape: &mut Tape, model: &RefinerModel, ids: &[NodeId], cost: Tensor) -> NodeId {
        let c = tape.constant(cost);
        let logits = model.forward(tape, ids, c);
        let up = tape.resample(logits, self.plan.clone());
        tape.softmax(up)
    }

    fn expectation(&self, p: &Tensor) -> Vec<f64> {
        let n = self.height * self.width;
        let mut d = vec![0.0; n];
        for (bin, w) in self.bin_values.iter().enumerate() {
            for (k, out) in d.iter_mut().enumerate() {
                *out += w * p.data[bin * n + k];
            }
        }
        d
    }
}

fn loss_node(tape: &mut Tape, cfg: &TrainConfig, pipe: &Pipeline, p: NodeId, prep: &Prepared) -> NodeId {
    let q = tape.constant(prep.target.clone());
    let per_pixel = match cfg.loss_mode {
        LossMode::L1Cos => graph::combined(tape, p, q, cfg.lambda),
        LossMode::L1 => graph::l1_vector(tape, p, q),
        LossMode::Ce => graph::cross_entropy(tape, p, q),
        LossMode::SmoothL1SoftArgmax => {
            let gt = tape.constant(prep.gt.clone());
            graph::smooth_l1_disparity(tape, p, &pipe.bin_values, gt)
        }
    };
    graph::masked_mean(tape, per_pixel, &prep.mask)
}

struct PassStats {
    loss: f64,
    tv_sum: f64,
    supervised: f64,
    pred: DisparityMap,
}

fn train_pass(
    cfg: &TrainConfig,
    pipe: &Pipeline,
    model: &RefinerModel,
    prep: &Prepared,
    grads: &mut [Vec<f64>],
) -> Result<PassStats> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = model.params.iter().map(|p| tape.param(p)).collect();
    let p = pipe.distribution(&mut tape, model, &ids, prep.cost.clone());
    let loss = loss_node(&mut tape, cfg, pipe, p, prep);
    let g = tape.backward(loss)?;
    for (acc, id) in grads.iter_mut().zip(&ids) {
        if let Some(g) = g.get(*id) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    let pv = tape.value(p);
    let n = pipe.height * pipe.width;
    let mut tv = vec![0.0; n];
    for (k, (a, b)) in pv.data.iter().zip(&prep.target.data).enumerate() {
        tv[k % n] += (a - b).abs();
    }
    let tv_sum = tv.iter().zip(&prep.mask).map(|(t, m)| 0.5 * t * m).sum();
    Ok(PassStats {
        loss: tape.value(loss).data[0],
        tv_sum,
        supervised: prep.mask.iter().sum(),
        pred: prediction_map(pipe, pipe.expectation(pv)),
    })
}

fn prediction_map(pipe: &Pipeline, values: Vec<f64>) -> DisparityMap {
    DisparityMap {
        width: pipe.width,
        height: pipe.height,
        valid: vec![true; values.len()],
        values,
    }
}

/// Learning rate for a 0-based epoch.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = cfg.lr_milestones.iter().filter(|m| **m <= epoch).count();
    cfg.lr * cfg.lr_gamma.powi(drops as i32)
}

pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_observed(cfg, dataset, |_| {})
}

/// Like [`train`], calling `observer` after every optimizer step.
pub fn train_observed<F>(cfg: &TrainConfig, dataset: &Dataset, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&StepRecord),
{
    let pipe = Pipeline::new(cfg)?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let prepared: Vec<Prepared> = dataset
        .samples
        .iter()
        .map(|s| pipe.prepare(s, cfg.sigma))
        .collect::<Result<_>>()?;
    let mut model = RefinerModel::new(pipe.grid.bins(), cfg.hidden, sample_seed(cfg.seed, MODEL_STREAM, 0))?;
    let mut opt = AdamW::new(&model.params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, SHUFFLE_STREAM, 0));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::new();
    let mut step = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut metrics = MetricsAccumulator::new();
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.numel()]).collect();
            let mut loss = 0.0;
            let (mut tv, mut supervised) = (0.0, 0.0);
            for &i in batch {
                let stats = train_pass(cfg, &pipe, &model, &prepared[i], &mut grads)?;
                loss += stats.loss;
                tv += stats.tv_sum;
                supervised += stats.supervised;
                if prepared[i].gt_map.valid_count() > 0 {
                    metrics.add(&stats.pred, &prepared[i].gt_map)?;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            loss *= scale;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss,
                    config: super::config_summary(cfg),
                });
            }
            for (p, g) in model.params.iter_mut().zip(grads) {
                p.grad = g.into_iter().map(|v| v * scale).collect();
            }
            opt.step(&mut model.params, lr);
            observer(&StepRecord {
                epoch,
                step,
                loss,
                tv: if supervised > 0.0 { tv / supervised } else { 0.0 },
            });
            step += 1;
            loss_sum += loss;
            batches += 1;
        }
        let loss = loss_sum / batches as f64;
        history.push(EpochRecord {
            epoch,
            lr,
            loss,
            train_epe: metrics.finish().map_or(f64::NAN, |m| m.epe),
        });
        if cfg.loss_threshold.is_some_and(|t| loss <= t) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        steps: step,
        stopped_early,
    })
}

/// Soft-argmax disparity map for one sample. Uses only the images.
pub fn predict(model: &RefinerModel, cfg: &TrainConfig, sample: &StereoSample) -> Result<DisparityMap> {
    let pipe = Pipeline::new(cfg)?;
    predict_with(&pipe, model, sample)
}

fn predict_with(pipe: &Pipeline, model: &RefinerModel, sample: &StereoSample) -> Result<DisparityMap> {
    if model.bins != pipe.grid.bins() {
        return Err(Error::invalid(format!(
            "model has {} bins, config grid has {}",
            model.bins,
            pipe.grid.bins()
        )));
    }
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = model
        .params
        .iter()
        .map(|p| tape.constant(Tensor::new(p.shape.clone(), p.value.clone())))
        .collect();
    let p = pipe.distribution(&mut tape, model, &ids, pipe.cost_tensor(sample)?);
    let values = pipe.expectation(tape.value(p));
    Ok(prediction_map(pipe, values))
}

/// Predictions for every sample of `dataset`, in order.
pub fn predict_all(model: &RefinerModel, cfg: &TrainConfig, dataset: &Dataset) -> Result<Vec<DisparityMap>> {
    let pipe = Pipeline::new(cfg)?;
    dataset.samples.iter().map(|s| predict_with(&pipe, model, s)).collect()
}

pub fn evaluate(model: &RefinerModel, cfg: &TrainConfig, dataset: &Dataset) -> Result<Metrics> {
    let preds = predict_all(model, cfg, dataset)?;
    let mut acc = MetricsAccumulator::new();
    for (pred, s) in preds.iter().zip(&dataset.samples) {
        acc.add(pred, &s.gt)?;
    }
    acc.finish()
}

pub fn scene_config(cfg: &TrainConfig, kind: SceneKind) -> SceneConfig {
    SceneConfig {
        width: cfg.width,
        height: cfg.height,
        d_max: cfg.d_max,
        noise: cfg.noise,
        kind,
    }
}

pub fn training_set(cfg: &TrainConfig) -> Result<Dataset> {
    Dataset::generate(
        scene_config(cfg, SceneKind::Split(cfg.train_split)),
        cfg.train_samples,
        cfg.seed,
        TRAIN_STREAM,
    )
}

pub fn evaluation_set(cfg: &TrainConfig) -> Result<Dataset> {
    Dataset::generate(
        scene_config(cfg, SceneKind::Split(cfg.eval_split)),
        cfg.eval_samples,
        cfg.seed,
        EVAL_STREAM,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub outcome: TrainOutcome,
    pub metrics: Metrics,
}

/// Generates the configured training and evaluation sets, trains and
/// evaluates.
pub fn run_experiment(cfg: &TrainConfig) -> Result<RunResult> {
    let train_set = training_set(cfg)?;
    let eval_set = evaluation_set(cfg)?;
    let outcome = train(cfg, &train_set)?;
    let metrics = evaluate(&outcome.model, cfg, &eval_set)?;
    Ok(RunResult { outcome, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            train_samples: 4,
            eval_samples: 2,
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_steps_down() {
        let cfg = TrainConfig {
            lr: 1.0,
            lr_milestones: vec![2, 4],
            lr_gamma: 0.5,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (0..6).map(|e| lr_at(&cfg, e)).collect();
        assert_eq!(lrs, vec![1.0, 1.0, 0.5, 0.5, 0.25, 0.25]);
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = small();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.outcome.history.len(), 3);
        assert_eq!(a.outcome.steps, 6);
    }

    #[test]
    fn loss_threshold_stops_early() {
        let cfg = TrainConfig {
            loss_threshold: Some(1e9),
            ..small()
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.outcome.stopped_early);
        assert_eq!(r.outcome.history.len(), 1);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            lr: 1e300,
            epochs: 5,
            ..small()
        };
        match run_experiment(&cfg) {
            Err(Error::Diverged { epoch, config, .. }) => {
                assert!(epoch < 5);
                assert!(config.contains("loss_mode=l1_cos"));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
