#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sgstereo"))
}

/// Runs the CLI with `--out-dir dir` appended.
pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("spawn sgstereo")
}

/// Like [`run_in`] but panics with stderr on a non-zero exit.
pub fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "sgstereo {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn core_golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/golden")
        .join(name)
}

/// Small, fast invocations whose CSV outputs are checked in under
/// `tests/golden/<name>/`.
pub struct GoldenCase {
    pub name: &'static str,
    pub args: &'static [&'static str],
    pub files: &'static [&'static str],
}

pub const GOLDEN_CASES: &[GoldenCase] = &[
    GoldenCase {
        name: "truncation",
        args: &["analyze-truncation", "--sigma", "0.5"],
        files: &["truncation.csv"],
    },
    GoldenCase {
        name: "gradient",
        args: &["analyze-gradient", "--dist", "gaussian", "--center", "12"],
        files: &["gradient.csv"],
    },
    GoldenCase {
        name: "landscape",
        args: &["analyze-landscape"],
        files: &["landscape.csv", "pair.csv"],
    },
    GoldenCase {
        name: "upsample",
        args: &["analyze-upsample", "--sigma", "0.5", "--factor", "4", "--bins", "80"],
        files: &["upsample.csv"],
    },
    GoldenCase {
        name: "train_tiny",
        args: &["train", "--epochs", "2", "--train-samples", "8", "--eval-samples", "2"],
        files: &["history.csv", "metrics.csv"],
    },
    GoldenCase {
        name: "ablate_tiny",
        args: &[
            "ablate",
            "--axis",
            "lambda",
            "--values",
            "0,0.5",
            "--seeds",
            "0",
            "--epochs",
            "1",
            "--train-samples",
            "4",
            "--eval-samples",
            "1",
        ],
        files: &["ablation_runs.csv", "ablation_summary.csv"],
    },
];

/// Runs `case` into `dir`. Returns the names of files that differ from the
/// checked-in copies; with `UPDATE_GOLDEN` set, rewrites them instead.
pub fn check_golden(case: &GoldenCase, dir: &Path) -> Vec<String> {
    run_ok(dir, case.args);
    let expected = golden_dir().join(case.name);
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut mismatched = Vec::new();
    for file in case.files {
        let got = fs::read(dir.join(file)).unwrap();
        let path = expected.join(file);
        if update {
            fs::create_dir_all(&expected).unwrap();
            fs::write(&path, &got).unwrap();
        } else if fs::read(&path).ok().as_deref() != Some(got.as_slice()) {
            mismatched.push(format!("{}/{file}", case.name));
        }
    }
    mismatched
}

/// Parses a CSV written by the CLI into its header and string rows.
pub fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().unwrap_or_default();
    (header, lines.collect())
}

/// `value -> column` for a table keyed by its first column.
pub fn column_by_key(path: &Path, column: &str) -> Vec<(String, f64)> {
    let (header, rows) = read_table(path);
    let c = header
        .iter()
        .position(|h| h == column)
        .unwrap_or_else(|| panic!("no column {column}"));
    rows.iter().map(|r| (r[0].clone(), r[c].parse().unwrap())).collect()
}

/// Sorted relative paths of every file under `dir`.
pub fn list_files(dir: &Path) -> Vec<String> {
    let mut out: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    out.sort();
    out
}
