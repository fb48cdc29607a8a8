use std::fs;
use std::path::Path;
use std::process::Command;

use graph_ood::graph::parse_tu_dataset;
use graph_ood_cli::runner::{CellStatus, SUMMARY};
use graph_ood_cli::{render_report, run_suite, ReportError, RunError, RunOptions, SuiteConfig};
use serde_json::json;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_graph-ood"));
    c.env_remove(graph_ood_cli::OUTPUT_ENV);
    c
}

fn small_settings() -> serde_json::Value {
    json!({"encoder": {"hidden_dim": 8, "num_layers": 2, "max_epochs": 4, "patience": 4}})
}

fn config(methods: &[&str], extra: serde_json::Value) -> serde_json::Value {
    let mut c = json!({
        "datasets": [{"name": "TRIANGLES", "source": {"kind": "triangles", "per_class": 8, "seed": 1}}],
        "methods": methods.iter().map(|m| json!({"method": m, "settings": small_settings()})).collect::<Vec<_>>(),
        "protocol": {"n_splits": 2},
        "output_dir": "out",
        "outputs": {"distance_matrix": false}
    });
    if let (Some(c), Some(e)) = (c.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            c.insert(k.clone(), v.clone());
        }
    }
    c
}

fn write_config(dir: &Path, v: &serde_json::Value) -> std::path::PathBuf {
    let p = dir.join("suite.json");
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

#[test]
fn minimal_suite_yields_ten_results_and_twenty_aurocs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: SuiteConfig = serde_json::from_value(config(&["single"], json!({}))).unwrap();
    let s = run_suite(&cfg, dir.path(), &RunOptions::default()).unwrap();
    assert!(s.failures().is_empty());
    assert_eq!(s.manifest.cells.len(), 10);
    let results: Vec<graph_ood::protocol::ExperimentResult> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/results/TRIANGLES__single.json")).unwrap())
            .unwrap();
    assert_eq!(results.len(), 10);
    let aurocs: usize = results.iter().flat_map(|r| r.auroc.values()).map(Vec::len).sum();
    assert_eq!(aurocs, 20);
    let summary = fs::read_to_string(dir.path().join("out").join(SUMMARY)).unwrap();
    assert_eq!(summary.lines().count(), 11);
    let confusion = fs::read_to_string(dir.path().join("out/matrices/TRIANGLES__single__confusion.csv")).unwrap();
    assert!(confusion.starts_with("ood_class,1,2,3"));
}

#[test]
fn unknown_method_fails_validation_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &config(&["foo"], json!({})));
    for sub in ["validate", "run"] {
        let out = bin().arg(sub).arg(&path).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{sub}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("methods[0]"));
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn rerun_is_cached_and_byte_identical_until_forced() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        &config(&["single", "nuq"], json!({"protocol": {"n_splits": 2, "ood_classes": [0, 3]}})),
    );
    let first = bin().arg("run").arg(&path).output().unwrap();
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let summary = fs::read(dir.path().join("out").join(SUMMARY)).unwrap();

    let second = bin().arg("run").arg(&path).arg("--jobs").arg("1").output().unwrap();
    assert!(second.status.success());
    let stdout = String::from_utf8_lossy(&second.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("cached")).count(), 4, "{stdout}");
    assert!(!stdout.contains("ran "));
    assert_eq!(fs::read(dir.path().join("out").join(SUMMARY)).unwrap(), summary);

    let forced = bin().arg("run").arg(&path).arg("--force").output().unwrap();
    let stdout = String::from_utf8_lossy(&forced.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("ran")).count(), 4);
    assert_eq!(fs::read(dir.path().join("out").join(SUMMARY)).unwrap(), summary);
}

#[test]
fn stale_key_reruns_only_that_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: SuiteConfig =
        serde_json::from_value(config(&["single"], json!({"protocol": {"n_splits": 1, "ood_classes": [1, 2]}})))
            .unwrap();
    run_suite(&cfg, dir.path(), &RunOptions::default()).unwrap();
    fs::write(dir.path().join("out/cells/TRIANGLES/single/ood_2/key.txt"), "stale").unwrap();
    let s = run_suite(&cfg, dir.path(), &RunOptions::default()).unwrap();
    let status: Vec<_> = s.manifest.cells.iter().map(|c| c.status.clone()).collect();
    assert_eq!(status, vec![CellStatus::Cached, CellStatus::Ran]);
}

#[test]
fn environment_variable_redirects_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &config(&["single"], json!({"protocol": {"n_splits": 1, "ood_classes": [0]}})));
    let elsewhere = dir.path().join("elsewhere");
    let out = bin()
        .arg("run")
        .arg(&path)
        .env(graph_ood_cli::OUTPUT_ENV, &elsewhere)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(elsewhere.join(SUMMARY).is_file());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn manifest_reproduces_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: SuiteConfig =
        serde_json::from_value(config(&["single", "de"], json!({"protocol": {"n_splits": 2, "ood_classes": [5]}})))
            .unwrap();
    run_suite(&cfg, dir.path(), &RunOptions::default()).unwrap();
    let manifest = dir.path().join("out/manifest.json");
    let again = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("run")
        .arg(&manifest)
        .env(graph_ood_cli::OUTPUT_ENV, again.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(dir.path().join("out").join(SUMMARY)).unwrap(),
        fs::read(again.path().join(SUMMARY)).unwrap()
    );
}

#[test]
fn report_of_a_single_cell_has_one_row_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: SuiteConfig = serde_json::from_value(config(
        &["single"],
        json!({"protocol": {"n_splits": 1, "ood_classes": [0]}, "outputs": {"distance_matrix": true}}),
    ))
    .unwrap();
    run_suite(&cfg, dir.path(), &RunOptions::default()).unwrap();
    let root = dir.path().join("out");
    let s = render_report(&root).unwrap();
    assert_eq!(s.rows, 1);
    let svg = fs::read_to_string(root.join("report/TRIANGLES__distance.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="cell""#).count(), 100);
    let first = fs::read(root.join("report/TRIANGLES__single__confusion.svg")).unwrap();
    render_report(&root).unwrap();
    assert_eq!(fs::read(root.join("report/TRIANGLES__single__confusion.svg")).unwrap(), first);
}

#[test]
fn report_lists_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: SuiteConfig =
        serde_json::from_value(config(&["single"], json!({"protocol": {"n_splits": 1, "ood_classes": [0, 1]}})))
            .unwrap();
    run_suite(&cfg, dir.path(), &RunOptions::default()).unwrap();
    let root = dir.path().join("out");
    fs::remove_file(root.join("cells/TRIANGLES/single/ood_1/result.json")).unwrap();
    match render_report(&root) {
        Err(ReportError::Missing(cells)) => assert_eq!(cells, vec!["TRIANGLES/single/ood_1"]),
        other => panic!("expected missing cells, got {other:?}"),
    }
    let out = bin().arg("report").arg(&root).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TRIANGLES/single/ood_1"));
}

#[test]
fn generated_triangles_feed_a_tu_suite() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = bin()
        .args(["gen-triangles", data.to_str().unwrap(), "--per-class", "6", "--seed", "3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let d = parse_tu_dataset(&data, "TRIANGLES").unwrap();
    assert_eq!(d.len(), 60);
    assert_eq!(d.class_names[0], "1");

    let cfg = config(&["single"], json!({"protocol": {"n_splits": 1, "ood_classes": [9]}}));
    let mut cfg = cfg;
    cfg["datasets"] = json!([{"name": "TRIANGLES", "source": {"kind": "tu", "root": "data"}}]);
    let path = write_config(dir.path(), &cfg);
    let run = bin().arg("run").arg(&path).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn out_of_range_class_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: SuiteConfig =
        serde_json::from_value(config(&["single"], json!({"protocol": {"n_splits": 1, "ood_classes": [10]}})))
            .unwrap();
    match run_suite(&cfg, dir.path(), &RunOptions::default()) {
        Err(RunError::Config(e)) => assert!(e.to_string().contains("protocol.ood_classes[0]")),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn failing_cells_exit_with_one_and_others_complete() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(&["single", "de"], json!({"protocol": {"n_splits": 1, "ood_classes": [0]}}));
    cfg["methods"][1]["settings"]["encoder"]["learning_rate"] = json!(1e308);
    cfg["methods"][1]["settings"]["encoder"]["max_epochs"] = json!(3);
    let path = write_config(dir.path(), &cfg);
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("out/cells/TRIANGLES/single/ood_0/result.json").is_file());
    let summary = fs::read_to_string(dir.path().join("out").join(SUMMARY)).unwrap();
    assert_eq!(summary.lines().count(), 2);
}
