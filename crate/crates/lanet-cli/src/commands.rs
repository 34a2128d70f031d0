//! Command implementations behind the CLI surface.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lanet_core::decoder::{forecast_from_vars, Forecast, Truth};
use lanet_core::metrics::{self, MetricReport};
use lanet_core::model::{predict_scene, LaNetModel};
use lanet_core::objective::{self, scene_truths, StepRecord};
use lanet_core::scene::{load_scene, save_scene, synthesize_scene, Scene};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::svg;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Load every `*.scene.json` under `dir`, sorted by file name.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<(PathBuf, Scene)>> {
    let entries = fs::read_dir(dir)
        .with_context(|| format!("reading scene directory {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".scene.json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no *.scene.json files in {}", dir.display());
    }
    let mut scenes = Vec::with_capacity(paths.len());
    for p in paths {
        let scene = load_scene(&p)?;
        scenes.push((p, scene));
    }
    Ok(scenes)
}

#[derive(Serialize, Deserialize)]
struct SynthManifest {
    seed: u64,
    count: usize,
    files: Vec<String>,
    spec: lanet_core::scene::SynthSpec,
}

/// Generate `count` scene files plus a manifest.
pub fn cmd_synth(cfg: &RunConfig, count: usize, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let mut files = Vec::with_capacity(count);
    for i in 0..count {
        let scene_seed = cfg.seed.wrapping_add(i as u64);
        let scene = synthesize_scene(scene_seed, &cfg.synth)?;
        let name = format!("{}.scene.json", scene.scenario_id);
        save_scene(&scene, &out.join(&name))?;
        files.push(name);
    }
    let manifest = SynthManifest {
        seed: cfg.seed,
        count,
        files,
        spec: cfg.synth.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out.join("manifest.json"), text)?;
    cfg.echo_into(out)?;
    log::info!("wrote {count} scenes into {}", out.display());
    Ok(())
}

/// Train on a scene directory; writes checkpoint, loss curve, config echo.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let scenes: Vec<Scene> = load_scene_dir(data)?.into_iter().map(|(_, s)| s).collect();
    ensure_dir(out)?;
    let mut model = LaNetModel::new(cfg.model, cfg.problem, cfg.seed)?;
    let mut csv = String::from("step,l_propose,l_refine,l_cls,total\n");
    let on_step = |r: &StepRecord| {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.l_propose, r.l_refine, r.l_cls, r.total
        ));
        if r.step.is_multiple_of(100) {
            log::info!("step {}: total {:.4}", r.step, r.total);
        }
    };
    let curve = objective::train(&mut model, &scenes, &cfg.train, on_step)?;
    fs::write(out.join("loss_curve.csv"), csv)?;
    model.save_checkpoint(&out.join("checkpoint.json"))?;
    cfg.echo_into(out)?;
    if let Some(last) = curve.last() {
        println!(
            "trained {} steps on {} scenes; final total loss {:.4}",
            curve.len(),
            scenes.len(),
            last.total
        );
    } else {
        println!("trained 0 steps; checkpoint equals initialization");
    }
    Ok(())
}

/// Forecast/truth cases plus candidate/kept edge totals.
type CaseCollection = (Vec<(Forecast, Truth)>, usize, usize);

/// Forecast/truth pairs for every target agent of every scene.
fn collect_cases(
    model: &LaNetModel,
    scenes: &[(PathBuf, Scene)],
    theta_override: Option<f64>,
) -> Result<CaseCollection> {
    let mut cases = Vec::new();
    let mut candidates = 0;
    let mut kept = 0;
    for (_, scene) in scenes {
        let fwd = model.forward(scene, false, theta_override)?;
        candidates += fwd.output.candidate_edges;
        kept += fwd.output.kept_edges;
        let truths = scene_truths(scene, &fwd.output.target_agents);
        for ((fv, &idx), truth) in fwd
            .output
            .refined
            .iter()
            .zip(&fwd.output.target_agents)
            .zip(truths)
        {
            let forecast = forecast_from_vars(
                &fwd.sess,
                fv,
                &scene.agents[idx].agent_id,
                model.problem().num_modes,
                model.problem().future_steps,
            );
            cases.push((forecast, truth));
        }
    }
    Ok((cases, candidates, kept))
}

/// Evaluate a checkpoint over a scene directory.
pub fn cmd_eval(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<MetricReport> {
    let model = LaNetModel::load_checkpoint(checkpoint)?;
    let scenes = load_scene_dir(data)?;
    let (cases, _, _) = collect_cases(&model, &scenes, None)?;
    let report = metrics::evaluate(&cases)?;
    println!("{}", report.table());
    if let Some(dir) = out {
        ensure_dir(dir)?;
        fs::write(
            dir.join("metrics.csv"),
            format!("{}\n{}\n", MetricReport::csv_header(), report.csv_row()),
        )?;
    }
    Ok(report)
}

#[derive(Serialize, Deserialize)]
pub struct ForecastFile {
    pub scenario_id: String,
    pub forecasts: Vec<Forecast>,
}

/// Predict one scene and write the forecast records.
pub fn cmd_predict(checkpoint: &Path, scene_path: &Path, out: &Path) -> Result<()> {
    let model = LaNetModel::load_checkpoint(checkpoint)?;
    let scene = load_scene(scene_path)?;
    let forecasts = predict_scene(&model, &scene, None)?;
    let file = ForecastFile {
        scenario_id: scene.scenario_id.clone(),
        forecasts,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// One row of the threshold sweep.
#[derive(Debug, Clone, Serialize)]
pub struct PruneRow {
    pub theta: f64,
    pub kept_fraction: f64,
    pub b_min_fde: f64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
}

/// Sweep pruning thresholds and report kept-edge fraction plus metrics.
pub fn cmd_prune_stats(
    checkpoint: &Path,
    data: &Path,
    thetas: &[f64],
    out: Option<&Path>,
) -> Result<Vec<PruneRow>> {
    let model = LaNetModel::load_checkpoint(checkpoint)?;
    let scenes = load_scene_dir(data)?;
    let trained_theta = model.caip().theta_value(model.store());
    println!("trained theta = {trained_theta:.4}");
    println!(
        "{:>6} {:>14} {:>10} {:>8} {:>8} {:>8}",
        "theta", "kept_fraction", "b-minFDE", "minADE", "minFDE", "MR"
    );
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let (cases, candidates, kept) = collect_cases(&model, &scenes, Some(theta))?;
        let report = metrics::evaluate(&cases)?;
        let kept_fraction = if candidates == 0 {
            1.0
        } else {
            kept as f64 / candidates as f64
        };
        println!(
            "{:>6.2} {:>14.4} {:>10.4} {:>8.4} {:>8.4} {:>8.4}",
            theta, kept_fraction, report.b_min_fde, report.min_ade, report.min_fde, report.miss_rate
        );
        rows.push(PruneRow {
            theta,
            kept_fraction,
            b_min_fde: report.b_min_fde,
            min_ade: report.min_ade,
            min_fde: report.min_fde,
            miss_rate: report.miss_rate,
        });
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let mut csv = String::from("theta,kept_fraction,b_min_fde,min_ade,min_fde,miss_rate\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.theta, r.kept_fraction, r.b_min_fde, r.min_ade, r.min_fde, r.miss_rate
            ));
        }
        fs::write(dir.join("prune_stats.csv"), csv)?;
    }
    Ok(rows)
}

/// Render one scene (with forecasts) as an SVG figure.
pub fn cmd_plot(checkpoint: &Path, scene_path: &Path, out: &Path) -> Result<()> {
    let model = LaNetModel::load_checkpoint(checkpoint)?;
    let scene = load_scene(scene_path)?;
    let forecasts = predict_scene(&model, &scene, None)?;
    let doc = svg::render_scene(&scene, &forecasts);
    fs::write(out, doc).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
