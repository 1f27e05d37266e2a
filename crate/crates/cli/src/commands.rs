use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sgstereo::costvolume::{
    max_interior_second_difference, piecewise_linear_fit_gap, piecewise_linear_fit_gap_values, AxisInterp,
};
use sgstereo::distributions::{distribution_expectation, sample_gaussian_target, truncation_analysis, DisparityGrid};
use sgstereo::io::{
    csv_bytes, encode_pgm, load_config, render_config, table_bytes, write_pfm, RunManifest, MANIFEST_FILE,
};
use sgstereo::losses::{combined_loss, equal_l1_pair, l1_vector, loss_landscape_scan, LandscapeSpec};
use sgstereo::pipeline::metrics::Metrics;
use sgstereo::pipeline::train::{evaluation_set, predict_all, training_set};
use sgstereo::pipeline::{evaluate, run_ablation, train, Image, RefinerModel, TrainConfig};
use sgstereo::regression::{gradient_bias_profile, soft_argmax};
use sgstereo::{Error, Result};

use crate::{Cli, Command, GradientDist, TrainOpts};

/// Weights plus the config they were trained with.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub config: TrainConfig,
    pub model: RefinerModel,
}

/// Output directory plus the files written into it so far.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn pfm(&mut self, name: &str, map: &sgstereo::regression::DisparityMap) -> Result<()> {
        let path = self.dir.join(name);
        write_pfm(map, &path)?;
        self.files.push(name.to_string());
        let mask = sgstereo::io::pfm::mask_path(Path::new(name));
        if self.dir.join(&mask).exists() {
            self.files.push(mask.to_string_lossy().into_owned());
        }
        Ok(())
    }

    fn finish(self, mut manifest: RunManifest) -> Result<()> {
        manifest.record_outputs(&self.dir, &self.files)?;
        manifest.write(&self.dir.join(MANIFEST_FILE))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid(message: impl Into<String>) -> Error {
    Error::InvalidArgument(message.into())
}

fn summary_line(command: &str, seed: u64, metrics: Option<&Metrics>) -> String {
    match metrics {
        Some(m) => format!("{command}\t{seed}\t{}\t{}", num(m.epe), num(m.d1)),
        None => format!("{command}\t{seed}\t-\t-"),
    }
}

fn metric_map(m: &Metrics) -> BTreeMap<String, f64> {
    [
        ("epe", m.epe),
        ("d1", m.d1),
        ("err_gt1", m.err_gt1),
        ("err_gt2", m.err_gt2),
        ("err_gt3", m.err_gt3),
        ("bias", m.bias),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn config_map(cfg: &TrainConfig) -> BTreeMap<String, String> {
    cfg.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Defaults, then the config file, then flags, then `--seed`.
fn resolve_config(cli: &Cli, opts: Option<&TrainOpts>) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(opts) = opts {
        opts.apply(&mut cfg).map_err(Error::InvalidArgument)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn image_pgm(image: &Image) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = image
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode_pgm(image.width, image.height, &pixels)
}

pub fn run(cli: &Cli) -> Result<Vec<String>> {
    match &cli.command {
        Command::GenData { samples, split, opts } => gen_data(cli, *samples, *split, opts),
        Command::Train { opts } => train_command(cli, opts),
        Command::Eval { model, split, samples } => eval_command(cli, model, *split, *samples),
        Command::Ablate {
            axis,
            values,
            seeds,
            jobs,
            eval_split,
            opts,
        } => {
            let mut cfg = resolve_config(cli, Some(opts))?;
            cfg.eval_split = eval_split.unwrap_or(axis.default_eval_split());
            let values: Vec<String> = if values.is_empty() {
                axis.default_values().iter().map(|v| v.to_string()).collect()
            } else {
                values.clone()
            };
            let seeds: Vec<u64> = if seeds.is_empty() {
                (0..3).map(|k| cfg.seed + k).collect()
            } else {
                seeds.clone()
            };
            let table = run_ablation(*axis, &values, &cfg, &seeds, *jobs)?;
            let mut out = Outputs::create(&cli.out_dir)?;
            let axis_name = axis.as_str();
            let runs_header = [
                axis_name,
                "seed",
                "epe",
                "d1",
                "err_gt1",
                "err_gt2",
                "err_gt3",
                "bias",
                "final_loss",
                "epochs_run",
            ];
            let rows: Vec<Vec<String>> = table
                .runs
                .iter()
                .map(|r| {
                    let m = &r.metrics;
                    vec![
                        r.value.clone(),
                        r.seed.to_string(),
                        num(m.epe),
                        num(m.d1),
                        num(m.err_gt1),
                        num(m.err_gt2),
                        num(m.err_gt3),
                        num(m.bias),
                        num(r.final_loss),
                        r.epochs_run.to_string(),
                    ]
                })
                .collect();
            out.write("ablation_runs.csv", &table_bytes(&runs_header, &rows)?)?;
            let summary_header = [
                axis_name, "seeds", "epe", "epe_std", "d1", "err_gt1", "err_gt2", "err_gt3", "bias",
            ];
            let rows: Vec<Vec<String>> = table
                .summary
                .iter()
                .map(|s| {
                    vec![
                        s.value.clone(),
                        s.seeds.to_string(),
                        num(s.epe),
                        num(s.epe_std),
                        num(s.d1),
                        num(s.err_gt1),
                        num(s.err_gt2),
                        num(s.err_gt3),
                        num(s.bias),
                    ]
                })
                .collect();
            out.write("ablation_summary.csv", &table_bytes(&summary_header, &rows)?)?;
            let mut config = config_map(&cfg);
            config.insert("axis".into(), axis_name.into());
            config.insert("values".into(), values.join(","));
            config.insert(
                "seeds".into(),
                seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            );
            let mut manifest = RunManifest::new("ablate", cfg.seed, config);
            for s in &table.summary {
                manifest.metrics.insert(format!("epe[{}]", s.value), s.epe);
                manifest.metrics.insert(format!("d1[{}]", s.value), s.d1);
            }
            out.finish(manifest)?;
            Ok(table
                .runs
                .iter()
                .map(|r| summary_line(&format!("ablate {axis_name}={}", r.value), r.seed, Some(&r.metrics)))
                .collect())
        }
        Command::AnalyzeGradient {
            bins,
            dist,
            center,
            spread,
        } => analyze_gradient(cli, *bins, *dist, *center, *spread),
        Command::AnalyzeTruncation { sigma, mu, lo, hi } => {
            let cfg = resolve_config(cli, None)?;
            let sigma = sigma.unwrap_or(cfg.sigma);
            let mut rows = Vec::new();
            let mut manifest_metrics = BTreeMap::new();
            for &m in mu {
                let r = truncation_analysis(m, sigma, *lo, *hi)?;
                manifest_metrics.insert(format!("expectation_shift[{}]", num(m)), r.expectation_shift);
                rows.push(vec![
                    num(m),
                    num(sigma),
                    lo.to_string(),
                    hi.to_string(),
                    num(r.mass_deficit),
                    num(r.expectation_shift),
                ]);
            }
            let mut out = Outputs::create(&cli.out_dir)?;
            let header = ["mu", "sigma", "lo", "hi", "mass_deficit", "expectation_shift"];
            out.write("truncation.csv", &table_bytes(&header, &rows)?)?;
            let config = params(&[
                ("sigma", num(sigma)),
                ("mu", join(mu)),
                ("lo", lo.to_string()),
                ("hi", hi.to_string()),
            ]);
            let mut manifest = RunManifest::new("analyze-truncation", cfg.seed, config);
            manifest.metrics = manifest_metrics;
            out.finish(manifest)?;
            Ok(vec![summary_line("analyze-truncation", cfg.seed, None)])
        }
        Command::AnalyzeLandscape {
            mu,
            eps,
            near,
            far,
            opts,
        } => analyze_landscape(cli, *mu, *eps, *near, *far, opts),
        Command::AnalyzeUpsample {
            sigma,
            factor,
            bins,
            mu,
        } => analyze_upsample(cli, *sigma, *factor, *bins, mu),
    }
}

/// Shortest round-trip form, with an exponent for very large or small
/// magnitudes.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn params(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| num(*v)).collect::<Vec<_>>().join(",")
}

fn gen_data(
    cli: &Cli,
    samples: Option<usize>,
    split: Option<sgstereo::pipeline::Split>,
    opts: &TrainOpts,
) -> Result<Vec<String>> {
    let mut cfg = resolve_config(cli, Some(opts))?;
    if let Some(n) = samples {
        cfg.eval_samples = n;
    }
    if let Some(s) = split {
        cfg.eval_split = s;
    }
    let data = evaluation_set(&cfg)?;
    let mut out = Outputs::create(&cli.out_dir)?;
    for (i, s) in data.samples.iter().enumerate() {
        out.write(&format!("sample_{i:03}_left.pgm"), &image_pgm(&s.left)?)?;
        out.write(&format!("sample_{i:03}_right.pgm"), &image_pgm(&s.right)?)?;
        out.pfm(&format!("sample_{i:03}_gt.pfm"), &s.gt)?;
    }
    out.write("config.txt", render_config(&cfg).as_bytes())?;
    let mut manifest = RunManifest::new("gen-data", cfg.seed, config_map(&cfg));
    manifest.metrics.insert("samples".into(), data.samples.len() as f64);
    out.finish(manifest)?;
    Ok(vec![summary_line("gen-data", cfg.seed, None)])
}

fn train_command(cli: &Cli, opts: &TrainOpts) -> Result<Vec<String>> {
    let cfg = resolve_config(cli, Some(opts))?;
    let outcome = train(&cfg, &training_set(&cfg)?)?;
    let metrics = evaluate(&outcome.model, &cfg, &evaluation_set(&cfg)?)?;
    let mut out = Outputs::create(&cli.out_dir)?;
    out.write("config.txt", render_config(&cfg).as_bytes())?;
    out.write("history.csv", &csv_bytes(&outcome.history)?)?;
    out.write("metrics.csv", &csv_bytes(&[metrics])?)?;
    let file = ModelFile {
        config: cfg.clone(),
        model: outcome.model,
    };
    let mut json = serde_json::to_string(&file).map_err(Error::Json)?;
    json.push('\n');
    out.write("model.json", json.as_bytes())?;
    let mut manifest = RunManifest::new("train", cfg.seed, config_map(&cfg));
    manifest.metrics = metric_map(&metrics);
    if let Some(last) = outcome.history.last() {
        manifest.metrics.insert("final_loss".into(), last.loss);
    }
    out.finish(manifest)?;
    Ok(vec![summary_line("train", cfg.seed, Some(&metrics))])
}

fn eval_command(
    cli: &Cli,
    model_path: &Path,
    split: Option<sgstereo::pipeline::Split>,
    samples: Option<usize>,
) -> Result<Vec<String>> {
    let text = fs::read_to_string(model_path).map_err(|e| io_error(model_path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(Error::Json)?;
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => file.config,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(s) = split {
        cfg.eval_split = s;
    }
    if let Some(n) = samples {
        cfg.eval_samples = n;
    }
    cfg.validate()?;
    let data = evaluation_set(&cfg)?;
    let preds = predict_all(&file.model, &cfg, &data)?;
    let metrics = evaluate(&file.model, &cfg, &data)?;
    let mut out = Outputs::create(&cli.out_dir)?;
    for (i, p) in preds.iter().enumerate() {
        out.pfm(&format!("pred_{i:03}.pfm"), p)?;
    }
    out.write("metrics.csv", &csv_bytes(&[metrics])?)?;
    let mut config = config_map(&cfg);
    config.insert("model".into(), model_path.to_string_lossy().into_owned());
    let mut manifest = RunManifest::new("eval", cfg.seed, config);
    manifest.metrics = metric_map(&metrics);
    out.finish(manifest)?;
    Ok(vec![summary_line("eval", cfg.seed, Some(&metrics))])
}

fn log_gaussian(i: f64, center: f64, spread: f64) -> f64 {
    -(i - center).powi(2) / (2.0 * spread * spread)
}

fn analyze_gradient(
    cli: &Cli,
    bins: usize,
    dist: GradientDist,
    center: Option<f64>,
    spread: f64,
) -> Result<Vec<String>> {
    let cfg = resolve_config(cli, None)?;
    if spread <= 0.0 || !spread.is_finite() {
        return Err(invalid(format!("spread must be positive, got {spread}")));
    }
    let grid = DisparityGrid::new(bins, 0, 1)?;
    let center = center.unwrap_or((bins as f64 - 1.0) / 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z: Vec<f64> = (0..bins)
        .map(|i| {
            let i = i as f64;
            match dist {
                GradientDist::Uniform => 0.0,
                GradientDist::Gaussian => log_gaussian(i, center, spread),
                GradientDist::Bimodal => {
                    let a = log_gaussian(i, center, spread);
                    let b = log_gaussian(i, bins as f64 - 1.0 - center, spread);
                    a.max(b) + (-(a - b).abs()).exp().ln_1p()
                }
                GradientDist::Random => rng.random_range(-3.0..3.0),
            }
        })
        .collect();
    let profile = gradient_bias_profile(&z, &grid)?;
    let rows: Vec<Vec<String>> = profile
        .iter()
        .map(|e| vec![e.bin.to_string(), num(e.distance), num(e.magnitude)])
        .collect();
    let monotone = profile.windows(2).all(|w| w[1].magnitude >= w[0].magnitude);
    let mut out = Outputs::create(&cli.out_dir)?;
    out.write("gradient.csv", &table_bytes(&["bin", "distance", "magnitude"], &rows)?)?;
    let dist_name = format!("{dist:?}").to_lowercase();
    let config = params(&[
        ("bins", bins.to_string()),
        ("dist", dist_name),
        ("center", num(center)),
        ("spread", num(spread)),
    ]);
    let mut manifest = RunManifest::new("analyze-gradient", cfg.seed, config);
    manifest.metrics.insert("soft_argmax".into(), soft_argmax(&z, &grid)?);
    manifest
        .metrics
        .insert("monotone".into(), if monotone { 1.0 } else { 0.0 });
    out.finish(manifest)?;
    Ok(vec![summary_line("analyze-gradient", cfg.seed, None)])
}

fn analyze_landscape(cli: &Cli, mu: f64, eps: f64, near: isize, far: isize, opts: &TrainOpts) -> Result<Vec<String>> {
    let cfg = resolve_config(cli, Some(opts))?;
    let grid = cfg.grid()?;
    let q = sample_gaussian_target(grid.bin_coord(mu), cfg.sigma, &grid)?.probs;
    let spec = LandscapeSpec {
        lambda: cfg.lambda,
        seed: cfg.seed,
        ..LandscapeSpec::default()
    };
    let scan = loss_landscape_scan(&q, &grid, &spec)?;
    let rows: Vec<Vec<String>> = scan
        .iter()
        .map(|r| vec![num(r.l1), num(r.combined), num(r.epe)])
        .collect();
    let (p_near, p_far) = equal_l1_pair(&q, eps, near, far)?;
    let eq = distribution_expectation(&q, &grid)?;
    let stride = grid.stride() as f64;
    let mut pair_rows = Vec::new();
    let mut stats = Vec::new();
    for (name, offset, p) in [("near", near, &p_near), ("far", far, &p_far)] {
        let l1 = l1_vector(p, &q)?;
        let combined = combined_loss(p, &q, cfg.lambda)?.value;
        let epe_bins = (distribution_expectation(p, &grid)? - eq).abs() / stride;
        stats.push((l1, combined, epe_bins));
        pair_rows.push(vec![
            name.to_string(),
            offset.to_string(),
            num(l1),
            num(combined),
            num(epe_bins),
        ]);
    }
    let mut out = Outputs::create(&cli.out_dir)?;
    out.write("landscape.csv", &table_bytes(&["l1", "combined", "epe"], &rows)?)?;
    out.write(
        "pair.csv",
        &table_bytes(&["member", "offset", "l1", "combined", "epe_bins"], &pair_rows)?,
    )?;
    let mut config = config_map(&cfg);
    config.insert("mu".into(), num(mu));
    config.insert("eps".into(), num(eps));
    config.insert("near".into(), near.to_string());
    config.insert("far".into(), far.to_string());
    let mut manifest = RunManifest::new("analyze-landscape", cfg.seed, config);
    manifest
        .metrics
        .insert("pair_l1_difference".into(), (stats[1].0 - stats[0].0).abs());
    manifest
        .metrics
        .insert("pair_epe_difference_bins".into(), (stats[1].2 - stats[0].2).abs());
    manifest
        .metrics
        .insert("pair_combined_difference".into(), (stats[1].1 - stats[0].1).abs());
    out.finish(manifest)?;
    Ok(vec![summary_line("analyze-landscape", cfg.seed, None)])
}

fn analyze_upsample(
    cli: &Cli,
    sigma: Option<f64>,
    factor: Option<usize>,
    bins: Option<usize>,
    mu: &[f64],
) -> Result<Vec<String>> {
    let cfg = resolve_config(cli, None)?;
    let sigma = sigma.unwrap_or(cfg.sigma);
    let factor = factor.unwrap_or(cfg.stride);
    if factor < 2 {
        return Err(invalid(format!("factor must be at least 2, got {factor}")));
    }
    let bins = bins.unwrap_or(cfg.grid()?.bins() * factor);
    let grid = DisparityGrid::new(bins, 0, 1)?;
    let mus: Vec<f64> = if mu.is_empty() {
        let knot = (bins / 2 / factor * factor) as f64;
        vec![knot, knot + factor as f64 / 2.0]
    } else {
        mu.to_vec()
    };
    let knots = bins.div_ceil(factor);
    let interp = AxisInterp::knot_aligned(knots, factor);
    let ramp: Vec<f64> = (0..bins).map(|j| j as f64 / bins as f64).collect();
    let ramp_gap = piecewise_linear_fit_gap_values(&ramp, factor)?;
    let mut rows = Vec::new();
    let mut manifest_metrics = BTreeMap::new();
    for &m in &mus {
        let target = sample_gaussian_target(m, sigma, &grid)?;
        let gap = piecewise_linear_fit_gap(&target, factor)?;
        let coarse: Vec<f64> = (0..knots).map(|k| target.probs[(k * factor).min(bins - 1)]).collect();
        let fine = interp.apply(&coarse);
        let second = max_interior_second_difference(&fine, factor);
        manifest_metrics.insert(format!("fit_gap[{}]", num(m)), gap);
        rows.push(vec![
            num(m),
            num(sigma),
            factor.to_string(),
            num(gap),
            num(ramp_gap),
            num(second),
        ]);
    }
    manifest_metrics.insert("ramp_gap".into(), ramp_gap);
    let mut out = Outputs::create(&cli.out_dir)?;
    let header = ["mu", "sigma", "factor", "fit_gap", "ramp_gap", "max_second_difference"];
    out.write("upsample.csv", &table_bytes(&header, &rows)?)?;
    let config = params(&[
        ("sigma", num(sigma)),
        ("factor", factor.to_string()),
        ("bins", bins.to_string()),
        ("mu", join(&mus)),
    ]);
    let mut manifest = RunManifest::new("analyze-upsample", cfg.seed, config);
    manifest.metrics = manifest_metrics;
    out.finish(manifest)?;
    Ok(vec![summary_line("analyze-upsample", cfg.seed, None)])
}
