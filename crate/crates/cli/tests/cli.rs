mod common;

use std::fs;

use sgstereo::io::manifest::{blob_hash, tree_hash};
use sgstereo::io::{decode_pgm, load_config, read_pfm, RunManifest, MANIFEST_FILE};

use common::{bin, check_golden, column_by_key, read_table, run_in, run_ok, GOLDEN_CASES};

const TINY: &[&str] = &["--epochs", "2", "--train-samples", "8", "--eval-samples", "2"];

fn stderr_line(out: &std::process::Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(text.lines().count(), 1, "stderr: {text}");
    text
}

#[test]
fn usage_errors_exit_two() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["analyze-gradient", "--dist", "cauchy"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["train", "--sigma=-1"]);
    assert_eq!(out.status.code(), Some(1));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[invalid-argument]: "), "{line}");
    assert!(line.contains("sigma"), "{line}");

    let out = run_in(dir.path(), &["eval", "--model", "/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(1));
    let line = stderr_line(&out);
    assert!(
        line.starts_with("error[io]: ") && line.contains("/nonexistent/model.json"),
        "{line}"
    );
}

#[test]
fn config_file_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "sigma2 = 0.5\n").unwrap();
    let out = run_in(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let line = stderr_line(&out);
    assert!(line.contains("sigma2") && line.contains("line 1"), "{line}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("base.cfg");
    let mut text = fs::read_to_string(common::core_golden("default.cfg")).unwrap();
    text = text.replace("sigma = 0.5", "sigma = 1");
    text = text.replace("lambda = 0.5", "lambda = 2");
    fs::write(&cfg_path, text).unwrap();
    let out = dir.path().join("run");
    let mut args = vec![
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--sigma",
        "0.75",
        "--seed",
        "11",
    ];
    args.extend_from_slice(TINY);
    run_ok(&out, &args);
    let used = load_config(&out.join("config.txt")).unwrap();
    assert_eq!(used.sigma, 0.75);
    assert_eq!(used.lambda, 2.0);
    assert_eq!(used.seed, 11);
    assert_eq!(used.epochs, 2);
}

#[test]
fn truncation_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run_ok(dir.path(), &["analyze-truncation", "--sigma", "0.5"]);
    assert_eq!(stdout, "analyze-truncation\t0\t-\t-\n");
    let shifts = column_by_key(&dir.path().join("truncation.csv"), "expectation_shift");
    assert_eq!(shifts[0].0, "0.0");
    assert!((shifts[0].1 - 0.119759).abs() < 1e-6, "{}", shifts[0].1);
    for w in shifts.windows(2) {
        assert!(w[1].1 <= w[0].1);
    }
}

#[test]
fn gradient_profile_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), &["analyze-gradient"]);
    let m = RunManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.metrics["monotone"], 1.0);
    let (header, rows) = read_table(&dir.path().join("gradient.csv"));
    assert_eq!(header, ["bin", "distance", "magnitude"]);
    assert_eq!(rows.len(), 48);
}

#[test]
fn every_command_writes_a_consistent_manifest() {
    let work = tempfile::tempdir().unwrap();
    let train_dir = work.path().join("train");
    let mut train = vec!["train"];
    train.extend_from_slice(TINY);
    run_ok(&train_dir, &train);
    let model = train_dir.join("model.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--samples", "1"],
        vec!["eval", "--model", model.to_str().unwrap()],
        vec![
            "ablate",
            "--axis",
            "lambda",
            "--values",
            "0,1",
            "--seeds",
            "0",
            "--epochs",
            "1",
            "--train-samples",
            "2",
            "--eval-samples",
            "1",
        ],
        vec!["analyze-gradient"],
        vec!["analyze-truncation"],
        vec!["analyze-landscape"],
        vec!["analyze-upsample"],
    ];
    let mut dirs = vec![("train".to_string(), train_dir.clone())];
    for (k, args) in cases.iter().enumerate() {
        let dir = work.path().join(k.to_string());
        run_ok(&dir, args);
        dirs.push((args[0].to_string(), dir));
    }
    for (command, dir) in dirs {
        let m = RunManifest::read(&dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.command, command);
        let mut listed: Vec<String> = m.outputs.iter().map(|o| o.path.clone()).collect();
        listed.push(MANIFEST_FILE.into());
        listed.sort();
        assert_eq!(listed, common::list_files(&dir), "{command}");
        for o in &m.outputs {
            let bytes = fs::read(dir.join(&o.path)).unwrap();
            assert_eq!(o.bytes, bytes.len() as u64);
            let hex: String = blob_hash(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            assert_eq!(o.blob, hex, "{command}: {}", o.path);
        }
        assert_eq!(m.content_hash, tree_hash(&m.outputs).unwrap());
    }
}

#[test]
fn gen_data_files_decode() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), &["gen-data", "--samples", "2", "--split", "endpoint"]);
    for i in 0..2 {
        let left = decode_pgm(&fs::read(dir.path().join(format!("sample_{i:03}_left.pgm"))).unwrap()).unwrap();
        let right = decode_pgm(&fs::read(dir.path().join(format!("sample_{i:03}_right.pgm"))).unwrap()).unwrap();
        let gt = read_pfm(&dir.path().join(format!("sample_{i:03}_gt.pfm"))).unwrap();
        assert_eq!((left.width, left.height), (gt.width, gt.height));
        assert_eq!((right.width, right.height), (gt.width, gt.height));
        assert!(gt.valid_count() > 0);
    }
    let cfg = load_config(&dir.path().join("config.txt")).unwrap();
    assert_eq!(cfg.eval_split.as_str(), "endpoint");
}

#[test]
fn eval_reproduces_training_metrics() {
    let work = tempfile::tempdir().unwrap();
    let train_dir = work.path().join("train");
    let mut train = vec!["train"];
    train.extend_from_slice(TINY);
    let train_line = run_ok(&train_dir, &train);
    let eval_dir = work.path().join("eval");
    let model = train_dir.join("model.json");
    let eval_line = run_ok(&eval_dir, &["eval", "--model", model.to_str().unwrap()]);
    assert_eq!(train_line.replacen("train", "eval", 1), eval_line);
    assert_eq!(
        fs::read(train_dir.join("metrics.csv")).unwrap(),
        fs::read(eval_dir.join("metrics.csv")).unwrap()
    );
    let preds = common::list_files(&eval_dir)
        .into_iter()
        .filter(|f| f.starts_with("pred_"))
        .count();
    assert!(preds >= 2);
}

#[test]
fn reruns_are_byte_identical() {
    let work = tempfile::tempdir().unwrap();
    for args in [
        vec!["gen-data", "--samples", "2", "--seed", "3"],
        [&["train"][..], TINY].concat(),
    ] {
        let a = work.path().join(format!("{}a", args[0]));
        let b = work.path().join(format!("{}b", args[0]));
        run_ok(&a, &args);
        run_ok(&b, &args);
        let files = common::list_files(&a);
        assert_eq!(files, common::list_files(&b));
        for f in files {
            assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn seeds_change_outputs() {
    let work = tempfile::tempdir().unwrap();
    let a = work.path().join("a");
    let b = work.path().join("b");
    run_ok(&a, &["gen-data", "--samples", "1", "--seed", "1"]);
    run_ok(&b, &["gen-data", "--samples", "1", "--seed", "2"]);
    assert_ne!(
        fs::read(a.join("sample_000_left.pgm")).unwrap(),
        fs::read(b.join("sample_000_left.pgm")).unwrap()
    );
}

#[test]
fn golden_outputs() {
    let work = tempfile::tempdir().unwrap();
    let mut mismatched = Vec::new();
    for case in GOLDEN_CASES {
        mismatched.extend(check_golden(case, &work.path().join(case.name)));
    }
    assert!(mismatched.is_empty(), "differs from tests/golden: {mismatched:?}");
}
