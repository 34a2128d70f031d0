//! Layered run configuration: built-in defaults, then a TOML file, then
//! `--set key=value` overrides. The fully resolved document is echoed into
//! every output directory so runs stay reproducible.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lanet_core::model::ModelConfig;
use lanet_core::objective::TrainConfig;
use lanet_core::scene::{ProblemConfig, SynthSpec};
use serde::{Deserialize, Serialize};

/// Evaluation-side knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Pruning thresholds swept by `prune-stats`.
    pub theta_sweep: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            theta_sweep: vec![0.5, 0.6, 0.7, 0.8],
        }
    }
}

/// Every knob of every module in one document.
///
/// `problem` is the single source of truth for the scene shape; it is copied
/// into `synth.problem` during resolution. The master `seed` drives model
/// initialization, scene synthesis, and training-order shuffling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub problem: ProblemConfig,
    pub model: ModelConfig,
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Resolve the layered configuration.
    pub fn resolve(file: Option<&Path>, sets: &[String], seed_flag: Option<u64>) -> Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default())
            .expect("default config must serialize");
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            let overlay: toml::Table = text
                .parse()
                .with_context(|| format!("parsing config file {}", path.display()))?;
            merge_tables(&mut table, overlay);
        }
        for entry in sets {
            apply_set(&mut table, entry)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        if let Some(seed) = seed_flag {
            cfg.seed = seed;
        }
        // One problem block, one master seed.
        cfg.synth.problem = cfg.problem;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem
            .validate()
            .map_err(|e| anyhow::anyhow!("problem config: {e}"))?;
        self.model.validate()?;
        self.synth.validate()?;
        self.train.validate()?;
        for theta in &self.eval.theta_sweep {
            if !(0.0..=1.0).contains(theta) {
                bail!("eval.theta_sweep entries must be in [0, 1], got {theta}");
            }
        }
        Ok(())
    }

    /// The resolved document as canonical TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config must serialize")
    }

    /// Write the resolved config echo into an output directory.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("config.resolved.toml"), self.to_toml())
            .with_context(|| format!("writing config echo into {}", dir.display()))
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Apply one `--set a.b.c=value` override. Values parse as TOML scalars and
/// fall back to strings.
fn apply_set(table: &mut toml::Table, entry: &str) -> Result<()> {
    let Some((path, raw)) = entry.split_once('=') else {
        bail!("--set expects KEY=VALUE, got {entry:?}");
    };
    let value = parse_toml_value(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("--set key path {path:?} has an empty segment");
    }
    let mut cursor = table;
    for key in &keys[..keys.len() - 1] {
        cursor = cursor
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow::anyhow!("--set path {path:?}: {key} is not a table"))?;
    }
    cursor.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_toml_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    if let Ok(t) = wrapped.parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_validate() {
        let cfg = RunConfig::resolve(None, &[], None).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.model.hidden_dim, 32);
        assert_eq!(cfg.eval.theta_sweep, vec![0.5, 0.6, 0.7, 0.8]);
        assert_eq!(cfg.synth.problem, cfg.problem);
    }

    #[test]
    fn set_overrides_take_precedence() {
        let cfg = RunConfig::resolve(
            None,
            &[
                "train.lr=0.01".into(),
                "model.hidden_dim=16".into(),
                "problem.history_steps=5".into(),
                "synth.num_agents=7".into(),
            ],
            Some(42),
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.model.hidden_dim, 16);
        assert_eq!(cfg.synth.num_agents, 7);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.train.seed, 42);
        // problem flows into the generator spec.
        assert_eq!(cfg.synth.problem.history_steps, 5);
    }

    #[test]
    fn file_layer_sits_between_defaults_and_sets() {
        let dir = std::env::temp_dir().join("lanet-config-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        fs::write(&path, "seed = 9\n[train]\nlr = 0.5\nsteps = 7\n").unwrap();
        let cfg =
            RunConfig::resolve(Some(&path), &["train.lr=0.25".into()], None).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.lr, 0.25, "--set must beat the file");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::resolve(None, &["model.no_such_knob=1".into()], None).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("no_such_knob") || msg.contains("unknown field"), "{msg}");
    }

    #[test]
    fn invalid_values_are_rejected_before_any_work() {
        assert!(RunConfig::resolve(None, &["model.hidden_dim=0".into()], None).is_err());
        assert!(RunConfig::resolve(None, &["problem.step_period=0.0".into()], None).is_err());
        assert!(RunConfig::resolve(None, &["eval.theta_sweep=[2.0]".into()], None).is_err());
    }

    #[test]
    fn resolved_echo_round_trips() {
        let cfg = RunConfig::resolve(None, &["train.lr=0.123".into()], None).unwrap();
        let text = cfg.to_toml();
        let reparsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(reparsed, cfg);
    }
}
