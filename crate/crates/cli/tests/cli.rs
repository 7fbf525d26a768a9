use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lscmf::io::{read_matrix, MatrixFormat};
use lscmf::simulate::{builtin_scenario, generate, partition_label};
use lscmf::{fit, FitOptions};
use serde_json::Value;

fn lscmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lscmf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generated_data_fits_to_the_in_process_partition() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("fit");
    let gen = lscmf(&["generate", "--scenario", "1", "--scale", "2", "--seed", "3", "--out", path(&data)]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let run = lscmf(&["fit", "--manifest", path(&data.join("manifest.json")), "--out", path(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let spec = builtin_scenario(1, 2, 3).unwrap();
    let generated = generate(&spec).unwrap();
    let result = fit(&spec.layout, generated.matrices, &FitOptions::default()).unwrap();
    let label = partition_label(&result.class_counts(), &spec.layout);
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert_eq!(stdout.trim(), format!("{} factors: {label}", result.n_factors()));

    let graph: Value = serde_json::from_str(&fs::read_to_string(out.join("graph.json")).unwrap()).unwrap();
    assert_eq!(graph["factors"].as_array().unwrap().len(), result.n_factors());
    assert_eq!(graph["values"].as_array().unwrap().len(), 2);
    let diagnostics: Value = serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diagnostics["matrices"].as_array().unwrap().len(), 2);

    let factors = read_matrix(&out.join("factors_1.csv"), MatrixFormat::Csv).unwrap();
    assert_eq!((factors.nrows(), factors.ncols()), (200, result.n_factors()));
    let values = read_matrix(&out.join("values_1_2.csv"), MatrixFormat::Csv).unwrap();
    assert_eq!((values.nrows(), values.ncols()), (result.n_factors(), 1));
    for (l, x) in result.values[&spec.layout.edges()[0]].iter().enumerate() {
        assert!((values[(l, 0)] - x).abs() <= 1e-12 * x.abs().max(1.0));
    }
}

#[test]
fn binary_format_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("fit");
    let gen = lscmf(&["generate", "--scenario", "3", "--scale", "1", "--out", path(&data), "--format", "bin"]);
    assert!(gen.status.success());
    assert!(data.join("Y_1_2.bin").exists());
    let run = lscmf(&["fit", "--manifest", path(&data.join("manifest.json")), "--out", path(&out), "--format", "bin"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let factors = read_matrix(&out.join("factors_1.bin"), MatrixFormat::Bin).unwrap();
    assert_eq!(factors.nrows(), 100);
}

fn write_block(dir: &Path, name: &str, rows: usize, cols: usize) {
    let text: String = (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| format!("{}", ((i * cols + j) as f64 * 0.37).sin()))
                .collect::<Vec<_>>()
                .join(",")
                + "\n"
        })
        .collect();
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn disconnected_layout_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_block(tmp.path(), "ab.csv", 6, 4);
    let manifest = r#"{
        "views": {"a": 6, "b": 4, "c": 5},
        "matrices": [{"row_view": "a", "col_view": "b", "path": "ab.csv"}]
    }"#;
    fs::write(tmp.path().join("manifest.json"), manifest).unwrap();
    let out = tmp.path().join("out");
    let run = lscmf(&["fit", "--manifest", path(&tmp.path().join("manifest.json")), "--out", path(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("disconnected view graph"));
    assert!(!out.exists());
}

#[test]
fn shape_mismatch_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    write_block(tmp.path(), "ab.csv", 5, 4);
    let manifest = r#"{
        "views": {"a": 6, "b": 4},
        "matrices": [{"row_view": "a", "col_view": "b", "path": "ab.csv"}]
    }"#;
    fs::write(tmp.path().join("manifest.json"), manifest).unwrap();
    let run = lscmf(&["fit", "--manifest", path(&tmp.path().join("manifest.json")), "--out", path(&tmp.path().join("out"))]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("ab.csv"));
}

#[test]
fn zero_replicates_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs.csv");
    let run = lscmf(&["simulate", "--scenario", "3", "--reps", "0", "--out", path(&out)]);
    assert!(run.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap_or_default(), "");
}

#[test]
fn unknown_scenario_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let run = lscmf(&["simulate", "--scenario", "7", "--reps", "1", "--out", path(&tmp.path().join("x.csv"))]);
    assert_eq!(run.status.code(), Some(2));
}

/// Every CSV column except the timings.
fn stable_columns(file: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(file).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !header[i].ends_with("_ms")).collect();
    lines
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cells[i].to_string()).collect()
        })
        .collect()
}

#[test]
fn simulation_is_reproducible_apart_from_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    for out in [&a, &b] {
        let run = lscmf(&["simulate", "--scenario", "3", "--reps", "3", "--seed", "5", "--out", path(out)]);
        assert!(run.status.success());
        assert!(String::from_utf8_lossy(&run.stdout).contains("exact matches:"));
    }
    let rows = stable_columns(&a);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows, stable_columns(&b));

    // a second run appends without repeating the header
    let run = lscmf(&["simulate", "--scenario", "3", "--reps", "1", "--seed", "9", "--out", path(&a)]);
    assert!(run.status.success());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert_eq!(text.lines().filter(|l| l.starts_with("scenario")).count(), 1);
}
