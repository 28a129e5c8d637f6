use std::fs;
use std::path::Path;

use inferguard::experiment::{
    line_plot, normalize, regenerate_reports, run_attr_experiment, run_inversion_experiment, validate_config,
    ExperimentConfig, Series, ATTR_REPORT, INV_DETAIL, INV_IMAGES, INV_PLOT, INV_REPORT,
};
use serde_json::{json, Value};

fn config(v: Value) -> ExperimentConfig {
    normalize(&v, Path::new("/")).unwrap()
}

fn tiny_inversion(dir: &Path) -> ExperimentConfig {
    config(json!({
        "kind": "inversion-attack",
        "output_dir": dir,
        "repetitions": 1,
        "data": {"side": 16, "n_train": 48, "n_query": 48, "n_eval": 6},
        "model": {"hidden_width": 16},
        "cut_points": [2, 4, 6],
        "defense": {"sigmas": [0, 0.02, 0.05]},
        "train": {"epochs": 1, "batch_size": 16},
        "attack": {"train": {"epochs": 2, "batch_size": 16}, "grid_images": 2}
    }))
}

/// Tags open and close in order; self-closing tags are skipped.
fn assert_balanced_xml(text: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let end = rest[start..].find('>').expect("unterminated tag") + start;
        let tag = &rest[start + 1..end];
        rest = &rest[end + 1..];
        if tag.starts_with('?') || tag.starts_with('!') || tag.ends_with('/') {
            continue;
        }
        let name = tag.trim_start_matches('/').split_whitespace().next().unwrap().to_string();
        if tag.starts_with('/') {
            assert_eq!(stack.pop().as_deref(), Some(name.as_str()), "mismatched </{name}>");
        } else {
            stack.push(name);
        }
    }
    assert!(stack.is_empty(), "unclosed {stack:?}");
}

#[test]
fn config_defaults_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"kind": "attr-attack"}"#).unwrap();
    let cfg = validate_config(&path).unwrap();
    assert_eq!(cfg.seed, 42);
    assert_eq!(cfg.output_dir, dir.path().join("out"));

    fs::write(&path, r#"{"kind": "inversion-attack", "defense": {"sigmas": [-0.1]}}"#).unwrap();
    let issues = validate_config(&path).unwrap_err();
    assert!(issues.iter().any(|i| i.pointer == "/defense/sigmas/0"), "{issues:?}");

    fs::write(&path, r#"{"kind": "nonsense"}"#).unwrap();
    let msg = validate_config(&path).unwrap_err().iter().map(|i| i.to_string()).collect::<String>();
    assert!(msg.contains("attr-attack") && msg.contains("inversion-attack"), "{msg}");
}

#[test]
fn svg_plots_have_one_polyline_per_series() {
    let series: Vec<Series> = (0..3)
        .map(|k| Series {
            label: format!("s<{k}>"),
            points: (0..5).map(|i| (i as f64, (i * k) as f64)).collect(),
            err: Some(vec![0.1; 5]),
        })
        .collect();
    let svg = line_plot("t & t", "x", "y", &series);
    assert_balanced_xml(&svg);
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert!(svg.contains("s&lt;1&gt;"));
}

fn attr(dir: &Path, flips: &[f64]) -> ExperimentConfig {
    config(json!({
        "kind": "attr-attack",
        "output_dir": dir,
        "repetitions": 10,
        "data": {"n": 200},
        "train": {"epochs": 2},
        "defense": {"flip_probabilities": flips}
    }))
}

#[test]
fn attr_grid_has_sixty_rows_per_target() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = attr(dir.path(), &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
    let out = run_attr_experiment(&cfg).unwrap();
    let targets = out.summary.len() / 6;
    assert!(targets >= 1);
    assert_eq!(out.rows.len(), 60 * targets);
    let csv = fs::read_to_string(dir.path().join(ATTR_REPORT)).unwrap();
    assert_eq!(csv.lines().count(), 60 * targets + 1);
}

#[test]
fn adding_a_sweep_point_keeps_the_others() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let few = run_attr_experiment(&attr(a.path(), &[0.0, 0.5])).unwrap();
    let more = run_attr_experiment(&attr(b.path(), &[0.0, 0.25, 0.5])).unwrap();
    let pick = |rows: &[inferguard::experiment::AttrRow], p: f64| {
        rows.iter().filter(|r| r.flip_p == p).cloned().collect::<Vec<_>>()
    };
    for p in [0.0, 0.5] {
        assert_eq!(pick(&few.rows, p), pick(&more.rows, p));
    }
}

#[test]
fn inversion_grid_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = run_inversion_experiment(&tiny_inversion(a.path())).unwrap();
    assert_eq!(out.report.len(), 9);
    assert_eq!(out.rows.len(), 9);

    // per-image rows satisfy the psnr/mse relation exactly as printed
    let text = fs::read_to_string(a.path().join(INV_IMAGES)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cut_layer,sigma,rep,image,mse,psnr,ssim"));
    let mut n = 0;
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect();
        let want = 10.0 * (65025.0 / f[4]).log10();
        assert!(((f[5] - want) / want).abs() < 1e-8, "{line}");
        assert!(f[6] <= 1.0);
        n += 1;
    }
    assert_eq!(n, 9 * 6);
    for cut in [2, 4, 6] {
        assert!(a.path().join(format!("grid_cut{cut}_sigma0.pgm")).exists());
    }
    assert_balanced_xml(&fs::read_to_string(a.path().join(INV_PLOT)).unwrap());

    // same seed, byte-identical CSVs
    run_inversion_experiment(&tiny_inversion(b.path())).unwrap();
    for f in [INV_REPORT, INV_DETAIL, INV_IMAGES] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }

    // summaries are rebuilt byte-for-byte from the detail file
    let report = fs::read(a.path().join(INV_REPORT)).unwrap();
    fs::remove_file(a.path().join(INV_REPORT)).unwrap();
    regenerate_reports(a.path()).unwrap();
    assert_eq!(fs::read(a.path().join(INV_REPORT)).unwrap(), report);
}

#[test]
fn report_without_detail_files_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(regenerate_reports(dir.path()).is_err());
}
