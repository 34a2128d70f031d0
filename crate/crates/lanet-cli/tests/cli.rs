//! Binary-level tests: exit codes, file outputs, determinism, and the SVG
//! figure structure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lanet_core::model::{LaNetModel, ModelConfig};
use lanet_core::scene::{load_scene, save_scene, ProblemConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lanet"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn lanet");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn lanet");
    assert!(
        !out.status.success(),
        "command {:?} unexpectedly succeeded",
        args
    );
    out
}

fn synth_into(dir: &Path, count: usize, extra: &[&str]) {
    let mut args = vec![
        "synth".to_string(),
        "--count".into(),
        count.to_string(),
        "--out".into(),
        dir.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let argv: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run_ok(&argv);
}

fn scene_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".scene.json"))
        .collect();
    v.sort();
    v
}

/// Train a tiny checkpoint for commands that need one.
fn quick_checkpoint(data: &Path, out: &Path, steps: &str) {
    run_ok(&[
        "train",
        "--data",
        &data.display().to_string(),
        "--out",
        &out.display().to_string(),
        "--set",
        &format!("train.steps={steps}"),
    ]);
}

#[test]
fn synth_writes_scenes_manifest_and_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    synth_into(&dir, 1, &[]);
    let scenes = scene_files(&dir);
    assert_eq!(scenes.len(), 1);
    assert!(dir.join("manifest.json").exists());
    assert!(dir.join("config.resolved.toml").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 1);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 1);
}

#[test]
fn synth_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth_into(&a, 3, &["--seed", "5"]);
    synth_into(&b, 3, &["--seed", "5"]);
    let fa = scene_files(&a);
    let fb = scene_files(&b);
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn synth_output_passes_loader_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    synth_into(&dir, 5, &["--set", "synth.crosswalk_prob=1.0"]);
    for p in scene_files(&dir) {
        load_scene(&p).unwrap();
    }
}

#[test]
fn set_overrides_reach_generator_and_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    synth_into(&dir, 1, &["--set", "synth.num_agents=5", "--set", "synth.num_targets=3"]);
    let scene = load_scene(&scene_files(&dir)[0]).unwrap();
    assert_eq!(scene.agents.len(), 5);
    assert_eq!(scene.target_indices().len(), 3);
    let echo = fs::read_to_string(dir.join("config.resolved.toml")).unwrap();
    assert!(echo.contains("num_agents = 5"), "{echo}");
}

#[test]
fn train_zero_steps_equals_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data, 2, &[]);
    let r1 = tmp.path().join("r1");
    let r2 = tmp.path().join("r2");
    quick_checkpoint(&data, &r1, "0");
    quick_checkpoint(&data, &r2, "0");
    let c1 = fs::read(r1.join("checkpoint.json")).unwrap();
    let c2 = fs::read(r2.join("checkpoint.json")).unwrap();
    assert_eq!(c1, c2);
    // And the parameters equal a freshly initialized model with the same seed.
    let fresh = LaNetModel::new(ModelConfig::default(), ProblemConfig::default(), 0).unwrap();
    let loaded = LaNetModel::load_checkpoint(&r1.join("checkpoint.json")).unwrap();
    for (name, value) in fresh.store().entries() {
        assert_eq!(loaded.store().value(name), value, "{name}");
    }
    // Loss curve is just the header.
    let curve = fs::read_to_string(r1.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1);
}

#[test]
fn missing_data_dir_fails_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_err(&[
        "train",
        "--data",
        &tmp.path().join("nope").display().to_string(),
        "--out",
        &tmp.path().join("run").display().to_string(),
    ]);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("nope"), "stderr should name the path: {msg}");
}

#[test]
fn eval_on_sceneless_dir_is_an_error_not_a_zero_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data, 1, &[]);
    let run = tmp.path().join("run");
    quick_checkpoint(&data, &run, "0");
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = run_err(&[
        "eval",
        "--checkpoint",
        &run.join("checkpoint.json").display().to_string(),
        "--data",
        &empty.display().to_string(),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no *.scene.json"));
}

#[test]
fn eval_twice_emits_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data, 2, &[]);
    let run = tmp.path().join("run");
    quick_checkpoint(&data, &run, "2");
    let args = [
        "eval",
        "--checkpoint",
        &run.join("checkpoint.json").display().to_string(),
        "--data",
        &data.display().to_string(),
    ];
    let a = run_ok(&args);
    let b = run_ok(&args);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn checkpoint_problem_mismatch_names_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data, 1, &[]);
    let run = tmp.path().join("run");
    quick_checkpoint(&data, &run, "0");
    // Scenes with a different horizon must be rejected.
    let other = tmp.path().join("other");
    synth_into(&other, 1, &["--set", "problem.future_steps=5"]);
    let out = run_err(&[
        "eval",
        "--checkpoint",
        &run.join("checkpoint.json").display().to_string(),
        "--data",
        &other.display().to_string(),
    ]);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("future_steps"), "{msg}");
}

#[test]
fn predict_writes_k_scored_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data, 1, &[]);
    let run = tmp.path().join("run");
    quick_checkpoint(&data, &run, "1");
    let scene = &scene_files(&data)[0];
    let fout = tmp.path().join("forecast.json");
    run_ok(&[
        "predict",
        "--checkpoint",
        &run.join("checkpoint.json").display().to_string(),
        "--scene",
        &scene.display().to_string(),
        "--out",
        &fout.display().to_string(),
    ]);
    let parsed: lanet_cli::commands::ForecastFile =
        serde_json::from_str(&fs::read_to_string(&fout).unwrap()).unwrap();
    let scene = load_scene(scene).unwrap();
    assert_eq!(parsed.forecasts.len(), scene.target_indices().len());
    for f in &parsed.forecasts {
        assert_eq!(f.num_modes(), scene.config.num_modes);
        assert_eq!(f.future_steps(), scene.config.future_steps);
        let total: f64 = f.mode_probs.iter().sum();
        approx::assert_relative_eq!(total, 1.0, epsilon = 1e-9);
    }
}

#[test]
fn prune_stats_sweep_has_monotone_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data, 3, &[]);
    let run = tmp.path().join("run");
    quick_checkpoint(&data, &run, "0");
    let outdir = tmp.path().join("stats");
    let out = run_ok(&[
        "prune-stats",
        "--checkpoint",
        &run.join("checkpoint.json").display().to_string(),
        "--data",
        &data.display().to_string(),
        "--thetas",
        "0.0,0.5,0.6,0.7,0.8",
        "--out",
        &outdir.display().to_string(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let csv = fs::read_to_string(outdir.join("prune_stats.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5, "stdout was: {stdout}");
    let fractions: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(fractions[0], 1.0, "theta=0 keeps every candidate edge");
    for w in fractions.windows(2) {
        assert!(w[1] <= w[0], "kept fraction must not increase: {fractions:?}");
    }
}

#[test]
fn plot_emits_valid_svg_with_expected_elements() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data, 1, &[]);
    let run = tmp.path().join("run");
    quick_checkpoint(&data, &run, "0");
    let scene_path = &scene_files(&data)[0];
    let svg_path = tmp.path().join("fig.svg");
    run_ok(&[
        "plot",
        "--checkpoint",
        &run.join("checkpoint.json").display().to_string(),
        "--scene",
        &scene_path.display().to_string(),
        "--out",
        &svg_path.display().to_string(),
    ]);
    let text = fs::read_to_string(&svg_path).unwrap();
    let scene = load_scene(scene_path).unwrap();
    let k = scene.config.num_modes;
    let targets = scene.target_indices().len();
    assert_eq!(text.matches("class=\"pred\"").count(), k * targets);
    assert_eq!(text.matches("class=\"best\"").count(), targets);

    // Structural validation: well-formed XML, svg root, 1.1, namespace.
    let doc = roxmltree::Document::parse(&text).unwrap();
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    assert_eq!(root.tag_name().namespace(), Some("http://www.w3.org/2000/svg"));
    assert_eq!(root.attribute("version"), Some("1.1"));

    // Deterministic bytes.
    let svg2 = tmp.path().join("fig2.svg");
    run_ok(&[
        "plot",
        "--checkpoint",
        &run.join("checkpoint.json").display().to_string(),
        "--scene",
        &scene_path.display().to_string(),
        "--out",
        &svg2.display().to_string(),
    ]);
    assert_eq!(fs::read(&svg_path).unwrap(), fs::read(&svg2).unwrap());
}

#[test]
fn plot_without_targets_draws_map_only() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data, 1, &[]);
    let run = tmp.path().join("run");
    quick_checkpoint(&data, &run, "0");
    let mut scene = load_scene(&scene_files(&data)[0]).unwrap();
    for a in &mut scene.agents {
        a.is_target = false;
    }
    let no_targets = tmp.path().join("no-targets.scene.json");
    save_scene(&scene, &no_targets).unwrap();
    let svg_path = tmp.path().join("map-only.svg");
    run_ok(&[
        "plot",
        "--checkpoint",
        &run.join("checkpoint.json").display().to_string(),
        "--scene",
        &no_targets.display().to_string(),
        "--out",
        &svg_path.display().to_string(),
    ]);
    let text = fs::read_to_string(&svg_path).unwrap();
    assert_eq!(text.matches("class=\"pred\"").count(), 0);
    assert_eq!(text.matches("class=\"best\"").count(), 0);
    assert!(text.matches("class=\"map-").count() >= scene.polygons.len());
}

#[test]
fn log_env_var_controls_verbosity() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    let out = bin()
        .args(["synth", "--count", "1", "--out", &dir.display().to_string()])
        .env("LANET_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("wrote 1 scenes"),
        "info log should appear on stderr"
    );
}
