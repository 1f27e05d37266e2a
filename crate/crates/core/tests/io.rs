use std::fs;
use std::path::{Path, PathBuf};

use sgstereo::io::pfm::mask_path;
use sgstereo::io::{load_config, read_pfm, render_config, save_config, write_csv, write_pfm, RunManifest};
use sgstereo::pipeline::metrics::Metrics;
use sgstereo::pipeline::TrainConfig;
use sgstereo::regression::DisparityMap;
use sgstereo::Error;

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

#[test]
fn asymmetric_pfm_orientation() {
    let map = read_pfm(&golden("asymmetric.pfm")).unwrap();
    assert_eq!((map.width, map.height), (3, 2));
    assert_eq!(map.values, vec![0.0, 1.0, 2.0, 10.5, -3.25, 1e-7f32 as f64]);
    assert!(map.valid.iter().all(|v| *v));
    let be = read_pfm(&golden("asymmetric_be.pfm")).unwrap();
    assert_eq!(be, map);
}

#[test]
fn pfm_rewrite_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["asymmetric.pfm", "masked.pfm"] {
        let map = read_pfm(&golden(name)).unwrap();
        let out = dir.path().join(name);
        write_pfm(&map, &out).unwrap();
        assert_eq!(fs::read(&out).unwrap(), fs::read(golden(name)).unwrap(), "{name}");
    }
    let mask = mask_path(&dir.path().join("masked.pfm"));
    assert_eq!(fs::read(mask).unwrap(), fs::read(golden("masked.mask.pgm")).unwrap());
    assert!(!mask_path(&dir.path().join("asymmetric.pfm")).exists());
}

#[test]
fn invalid_pixels_use_mask_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pfm");
    let map = DisparityMap::new(2, 2, vec![0.0, 1.0, f64::INFINITY, 3.0]).unwrap();
    write_pfm(&map, &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(golden("masked.pfm")).unwrap());
    let back = read_pfm(&path).unwrap();
    assert_eq!(back.valid, vec![true, true, false, true]);
    assert_eq!(back.values, vec![0.0, 1.0, 0.0, 3.0]);

    let full = DisparityMap::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    write_pfm(&full, &path).unwrap();
    assert!(!mask_path(&path).exists());
    assert_eq!(read_pfm(&path).unwrap(), full);
}

#[test]
fn truncated_file_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.pfm");
    let mut bytes = fs::read(golden("asymmetric.pfm")).unwrap();
    bytes.pop();
    fs::write(&path, &bytes).unwrap();
    match read_pfm(&path).unwrap_err() {
        Error::Parse { offset, .. } => assert_eq!(offset, bytes.len()),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn default_config_golden() {
    let cfg = load_config(&golden("default.cfg")).unwrap();
    assert_eq!(cfg, TrainConfig::default());
    assert_eq!(render_config(&cfg), fs::read_to_string(golden("default.cfg")).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.cfg");
    save_config(&cfg, &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(golden("default.cfg")).unwrap());
}

#[test]
fn config_rejects_unknown_key_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.cfg");
    let text = fs::read_to_string(golden("default.cfg")).unwrap() + "sigma2 = 0.5\n";
    fs::write(&path, text).unwrap();
    let err = load_config(&path).unwrap_err();
    assert!(err.to_string().contains("sigma2"), "{err}");
}

#[test]
fn metrics_csv_golden() {
    let m = Metrics {
        epe: 0.5,
        d1: 2.5,
        err_gt1: 10.0,
        err_gt2: 5.0,
        err_gt3: 2.5,
        bias: -0.125,
        valid_pixels: 1000,
        total_pixels: 2048,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_csv(&[m], &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(golden("metrics.csv")).unwrap());
    let back: Vec<Metrics> = sgstereo::io::read_csv(&path).unwrap();
    assert_eq!(back, vec![m]);
}

#[test]
fn manifest_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(golden("metrics.csv"), dir.path().join("metrics.csv")).unwrap();
    let cfg = TrainConfig::default();
    let mut m = RunManifest::new(
        "train",
        cfg.seed,
        cfg.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    );
    m.metrics.insert("epe".into(), 0.5);
    m.record_outputs(dir.path(), &["metrics.csv".into()]).unwrap();
    let path = dir.path().join("manifest.json");
    m.write(&path).unwrap();
    let back = RunManifest::read(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.outputs[0].bytes, 100);
}
