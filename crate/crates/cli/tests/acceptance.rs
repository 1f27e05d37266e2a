//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Every criterion is evaluated
//! and reported; the process fails only when `ACCEPTANCE_STRICT` is set and
//! some criterion failed.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgstereo::autodiff::probe::{soft_argmax_reference, Probe, ALL_KINDS, PROBE_LEN};
use sgstereo::autodiff::{central_difference_dd, relative_error};
use sgstereo::costvolume::{
    max_interior_second_difference, piecewise_linear_fit_gap, piecewise_linear_fit_gap_values, upsample_trilinear,
    CostVolume,
};
use sgstereo::distributions::{distribution_expectation, sample_gaussian_target, truncation_analysis, DisparityGrid};
use sgstereo::io::{load_config, read_pfm, render_config, write_csv, write_pfm, RunManifest, MANIFEST_FILE};
use sgstereo::losses::{combined_loss, equal_l1_pair, l1_vector, loss_landscape_scan, LandscapeSpec};
use sgstereo::pipeline::metrics::Metrics;
use sgstereo::pipeline::TrainConfig;
use sgstereo::regression::soft_argmax_gradient;

use common::{check_golden, column_by_key, core_golden, list_files, run_ok, GOLDEN_CASES};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn criterion(n: usize, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = v.pass && in_time;
    let budget = match limit {
        Some(l) if !in_time => format!(", over the {}s budget", l.as_secs()),
        Some(l) => format!(" of {}s", l.as_secs()),
        None => String::new(),
    };
    println!(
        "{} criterion {n} ({title}): {} [{:.1}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64()
    );
    pass
}

fn logits(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
}

fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = DisparityGrid::new(PROBE_LEN, 0, 1).unwrap();
    let (mut worst_sa, mut worst_sum) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let z = logits(&mut rng, PROBE_LEN);
        let g = soft_argmax_gradient(&z, &grid).unwrap();
        let fd = central_difference_dd(|v| soft_argmax_reference(v, &grid), &z, 1e-6);
        worst_sa = worst_sa.max(relative_error(&g, &fd));
        worst_sum = worst_sum.max(g.iter().sum::<f64>().abs());
    }
    let mut worst_op = (0.0f64, ALL_KINDS[0]);
    for (k, kind) in ALL_KINDS.iter().enumerate() {
        for i in 0..100u64 {
            let probe = Probe::new(*kind, 1000 * k as u64 + i);
            let err = probe.check(&logits(&mut rng, PROBE_LEN), 1e-6);
            if err.is_nan() || err > worst_op.0 {
                worst_op = (err, *kind);
            }
        }
    }
    let pass = worst_sa <= 1e-6 && worst_op.0 <= 1e-6 && worst_sum <= 1e-10;
    verdict(
        pass,
        format!(
            "soft-argmax rel err {worst_sa:.2e}, worst op {:?} {:.2e} over {} kinds, |sum grad| {worst_sum:.2e}",
            worst_op.1,
            worst_op.0,
            ALL_KINDS.len()
        ),
    )
}

fn distributions() -> Verdict {
    let grid = DisparityGrid::new(48, 16, 1).unwrap();
    let mut worst_sum = 0.0f64;
    let mut worst_interior = 0.0f64;
    let mut off_integer = 0.0f64;
    for sigma in [0.5, 1.0, 2.0] {
        for k in 0..=480 {
            let mu = k as f64 / 10.0;
            let t = sample_gaussian_target(grid.bin_coord(mu), sigma, &grid).unwrap();
            worst_sum = worst_sum.max((t.probs.iter().sum::<f64>() - 1.0).abs());
            let err = (distribution_expectation(&t.probs, &grid).unwrap() - mu).abs();
            if sigma >= 1.0 || k % 10 == 0 {
                worst_interior = worst_interior.max(err);
            } else {
                off_integer = off_integer.max(err);
            }
        }
    }
    verdict(
        worst_sum <= 1e-12 && worst_interior < 1e-6,
        format!(
            "|sum-1| {worst_sum:.1e}, |E-mu| {worst_interior:.1e} over mu in [0,48] (sigma 0.5 at integers, 1 and 2 everywhere); sigma 0.5 off-integer {off_integer:.1e} (info)"
        ),
    )
}

fn truncation() -> Verdict {
    let shifts: Vec<f64> = (0..=5)
        .map(|mu| truncation_analysis(mu as f64, 0.5, 0, 47).unwrap().expectation_shift)
        .collect();
    let close = (shifts[0] - 0.119759).abs() <= 1e-6;
    let positive = shifts[0] > 0.0;
    let monotone = shifts.windows(2).all(|w| w[1].abs() <= w[0].abs());
    verdict(
        close && positive && monotone,
        format!(
            "shift(0) = {:.9}, monotone {monotone}, shifts [{}]",
            shifts[0],
            shifts.iter().map(|s| format!("{s:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn trilinear() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let coarse = DisparityGrid::new(48, 0, 4).unwrap();
    let (h, w) = (3, 4);
    let n = coarse.bins() * h * w;
    let volume = CostVolume {
        channels: 1,
        height: h,
        width: w,
        grid: coarse,
        spatial_scale: 4,
        data: logits(&mut rng, n),
        valid: vec![true; n],
    };
    let fine = upsample_trilinear(&volume, 4).unwrap();
    let mut collinear = 0.0f64;
    for y in 0..fine.height {
        for x in 0..fine.width {
            collinear = collinear.max(max_interior_second_difference(&fine.column(0, y, x), 4));
        }
    }
    let probe = DisparityGrid::new(80, 0, 1).unwrap();
    let off_knot = sample_gaussian_target(42.0, 0.5, &probe).unwrap();
    let gap = piecewise_linear_fit_gap(&off_knot, 4).unwrap();
    let ramp: Vec<f64> = (0..80).map(|j| j as f64 / 80.0).collect();
    let ramp_gap = piecewise_linear_fit_gap_values(&ramp, 4).unwrap();
    verdict(
        collinear <= 1e-12 && gap > 0.05 && ramp_gap == 0.0,
        format!("second difference {collinear:.1e}, off-knot gap {gap:.4}, ramp gap {ramp_gap:e}"),
    )
}

fn landscape() -> Verdict {
    let cfg = TrainConfig::default();
    let grid = cfg.grid().unwrap();
    let stride = grid.stride() as f64;
    let q = sample_gaussian_target(grid.bin_coord(20.0), cfg.sigma, &grid)
        .unwrap()
        .probs;
    let (near, far) = equal_l1_pair(&q, 0.2, 1, 5).unwrap();
    let l1_gap = (l1_vector(&near, &q).unwrap() - l1_vector(&far, &q).unwrap()).abs();
    let e = |p: &[f64]| distribution_expectation(p, &grid).unwrap();
    let epe_bins = (e(&far) - e(&near)).abs() / stride;
    let combined = |p: &[f64]| combined_loss(p, &q, cfg.lambda).unwrap().value;
    let loss_gap = (combined(&far) - combined(&near)).abs();

    // Every scan of whole-bin targets contains an equal-L1 pair half a bin apart.
    let mut scans_with_pair = 0;
    let centres = [8.0, 12.0, 20.0, 28.0, 36.0, 44.0];
    for mu in centres {
        let q = sample_gaussian_target(grid.bin_coord(mu), cfg.sigma, &grid)
            .unwrap()
            .probs;
        let rows = loss_landscape_scan(&q, &grid, &LandscapeSpec::default()).unwrap();
        let found = rows.iter().enumerate().any(|(i, a)| {
            rows[i + 1..]
                .iter()
                .any(|b| (a.l1 - b.l1).abs() <= 1e-12 && (a.epe - b.epe).abs() >= 0.5 * stride)
        });
        scans_with_pair += found as usize;
    }
    verdict(
        l1_gap <= 1e-12 && epe_bins >= 0.5 && loss_gap >= 1e-3 && scans_with_pair == centres.len(),
        format!(
            "pair L1 diff {l1_gap:.1e}, EPE diff {epe_bins:.3} bins, combined diff {loss_gap:.2e}; {scans_with_pair}/{} scans contain such a pair",
            centres.len()
        ),
    )
}

/// `(axis value, mean EPE)` rows.
type EpeTable = [(String, f64)];

/// Seed-averaged EPE per axis value from a CLI ablation with default settings.
fn ablate(axis: &str, extra: &[&str]) -> Vec<(String, f64)> {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--axis", axis];
    args.extend_from_slice(extra);
    run_ok(dir.path(), &args);
    column_by_key(&dir.path().join("ablation_summary.csv"), "epe")
}

fn epe_of(table: &[(String, f64)], value: &str) -> f64 {
    table.iter().find(|(v, _)| v == value).map(|(_, e)| *e).unwrap()
}

fn format_table(table: &[(String, f64)]) -> String {
    table
        .iter()
        .map(|(v, e)| format!("{v}={e:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn loss_modes() -> Verdict {
    let t = ablate("loss_mode", &[]);
    let cos = epe_of(&t, "l1_cos");
    let ce = epe_of(&t, "ce");
    let base = epe_of(&t, "smooth_l1_softargmax");
    verdict(
        cos <= ce && cos <= base,
        format!(
            "ambiguous split, 3 seeds: {}; l1_cos<=ce {}, l1_cos<=smooth_l1 {}",
            format_table(&t),
            cos <= ce,
            cos <= base
        ),
    )
}

/// Relative tolerance for "tied" in the sigma sweep.
const TIE_TOLERANCE: f64 = 0.01;

fn sweeps() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    let mut sweep = |name: &str, axis: &str, check: &dyn Fn(&EpeTable) -> bool| {
        let start = Instant::now();
        let t = ablate(axis, &[]);
        let secs = start.elapsed().as_secs_f64();
        let ok = check(&t) && secs <= 15.0 * 60.0;
        pass &= ok;
        parts.push(format!(
            "{name} {} [{}] {secs:.0}s",
            if ok { "ok" } else { "FAILED" },
            format_table(&t)
        ));
    };
    sweep("sigma", "sigma", &|t| {
        let others = t
            .iter()
            .filter(|(v, _)| v != "0.5")
            .map(|(_, e)| *e)
            .fold(f64::INFINITY, f64::min);
        epe_of(t, "0.5") <= others * (1.0 + TIE_TOLERANCE)
    });
    sweep("d_ext (endpoint split)", "d_ext", &|t| {
        epe_of(t, "16") <= epe_of(t, "0")
    });
    sweep("upsample", "upsample_mode", &|t| {
        epe_of(t, "bilinear") <= epe_of(t, "trilinear")
    });
    verdict(pass, parts.join("; "))
}

const TINY: &[&str] = &["--epochs", "2", "--train-samples", "8", "--eval-samples", "2"];

/// Name, arguments, and a `--jobs` value for the second run.
type Rerun<'a> = (&'a str, Vec<&'a str>, Option<&'a str>);

/// Every command, run twice into fresh directories.
fn determinism() -> Verdict {
    let work = tempfile::tempdir().unwrap();
    let model_dir = work.path().join("model");
    run_ok(&model_dir, &[&["train"][..], TINY].concat());
    let model = model_dir.join("model.json");
    let model = model.to_str().unwrap();
    let ablate_args = [
        "ablate",
        "--axis",
        "sigma",
        "--values",
        "0.5,1",
        "--seeds",
        "3,4",
        "--epochs",
        "1",
        "--train-samples",
        "4",
        "--eval-samples",
        "1",
    ];
    let train: Vec<&str> = [&["train", "--seed", "5"][..], TINY].concat();
    let commands: Vec<Rerun> = vec![
        ("gen-data", vec!["gen-data", "--samples", "2", "--seed", "9"], None),
        ("train", train, None),
        ("eval", vec!["eval", "--model", model], None),
        ("ablate (jobs 1 vs 2)", ablate_args.to_vec(), Some("2")),
        (
            "analyze-gradient",
            vec!["analyze-gradient", "--dist", "random", "--seed", "7"],
            None,
        ),
        ("analyze-truncation", vec!["analyze-truncation"], None),
        ("analyze-landscape", vec!["analyze-landscape", "--mu", "17"], None),
        ("analyze-upsample", vec!["analyze-upsample"], None),
    ];

    let mut failures = Vec::new();
    let mut files = 0;
    let mut worst_metric = 0.0f64;
    for (k, (name, args, jobs)) in commands.iter().enumerate() {
        let a = work.path().join(format!("{k}a"));
        let b = work.path().join(format!("{k}b"));
        let mut second = args.clone();
        if let Some(j) = jobs {
            second.extend(["--jobs", j]);
        }
        let out_a = run_ok(&a, args);
        let out_b = run_ok(&b, &second);
        if out_a != out_b {
            failures.push(format!("{name}: stdout"));
        }
        let (fa, fb) = (list_files(&a), list_files(&b));
        if fa != fb {
            failures.push(format!("{name}: file sets differ"));
            continue;
        }
        for f in &fa {
            files += 1;
            if fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap() {
                failures.push(format!("{name}: {f}"));
            }
        }
        let ma = RunManifest::read(&a.join(MANIFEST_FILE)).unwrap();
        let mb = RunManifest::read(&b.join(MANIFEST_FILE)).unwrap();
        for (key, va) in &ma.metrics {
            let diff = mb.metrics.get(key).map_or(f64::INFINITY, |vb| (va - vb).abs());
            worst_metric = worst_metric.max(diff);
        }
    }
    verdict(
        failures.is_empty() && worst_metric <= 1e-9,
        if failures.is_empty() {
            format!(
                "{} commands, {files} files byte-identical, metric diff {worst_metric:e}",
                commands.len()
            )
        } else {
            format!("mismatches: {}", failures.join(", "))
        },
    )
}

fn roundtrips() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    let same = |a: &Path, b: &Path| fs::read(a).ok() == fs::read(b).ok();

    for name in ["asymmetric.pfm", "masked.pfm"] {
        let map = read_pfm(&core_golden(name)).unwrap();
        let out = dir.path().join(name);
        write_pfm(&map, &out).unwrap();
        if !same(&out, &core_golden(name)) {
            failures.push(name.to_string());
        }
    }
    if !same(&dir.path().join("masked.mask.pgm"), &core_golden("masked.mask.pgm")) {
        failures.push("masked.mask.pgm".into());
    }
    if read_pfm(&core_golden("asymmetric_be.pfm")).ok() != read_pfm(&core_golden("asymmetric.pfm")).ok() {
        failures.push("asymmetric_be.pfm".into());
    }

    let cfg = load_config(&core_golden("default.cfg")).unwrap();
    if cfg != TrainConfig::default() || render_config(&cfg) != fs::read_to_string(core_golden("default.cfg")).unwrap() {
        failures.push("default.cfg".into());
    }

    let metrics = Metrics {
        epe: 0.5,
        d1: 2.5,
        err_gt1: 10.0,
        err_gt2: 5.0,
        err_gt3: 2.5,
        bias: -0.125,
        valid_pixels: 1000,
        total_pixels: 2048,
    };
    let csv = dir.path().join("metrics.csv");
    write_csv(&[metrics], &csv).unwrap();
    if !same(&csv, &core_golden("metrics.csv")) {
        failures.push("metrics.csv".into());
    }

    let mut checked = 0;
    for case in GOLDEN_CASES {
        let out = dir.path().join(case.name);
        failures.extend(check_golden(case, &out));
        checked += case.files.len();
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("PFM (both byte orders, mask sidecar), config, metrics CSV and {checked} CLI CSVs bit-exact")
        } else {
            format!("mismatches: {}", failures.join(", "))
        },
    )
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "gradient correctness", Some(secs(10)), gradients),
        criterion(2, "distribution properties", Some(secs(5)), distributions),
        criterion(3, "endpoint deviation", Some(secs(5)), truncation),
        criterion(4, "trilinear impossibility", Some(secs(30)), trilinear),
        criterion(5, "equal-L1 pair", Some(secs(5)), landscape),
        criterion(6, "loss-mode direction", Some(secs(15 * 60)), loss_modes),
        criterion(7, "ablation directions", None, sweeps),
        criterion(8, "determinism", None, determinism),
        criterion(9, "roundtrip goldens", None, roundtrips),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if passed < results.len() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
