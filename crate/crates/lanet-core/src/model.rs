//! The assembled model: map encoder, agent encoder, pruning module, and
//! decoder sharing one parameter store, plus the versioned checkpoint
//! container.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::agent_encoder::AgentEncoderDef;
use crate::caip::{CaipConfig, CaipDef};
use crate::decoder::{forecast_from_vars, DecodeOutput, DecoderDef, Forecast};
use crate::error::{Error, Result};
use crate::map_encoder::MapEncoderDef;
use crate::nn::{ParamStore, Session};
use crate::scene::{ProblemConfig, Scene};

/// Architecture hyperparameters. Checkpoints refuse to load when these do
/// not match the stored values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    /// Weight-shared message-passing rounds in both encoders.
    pub encoder_rounds: usize,
    /// Neighbors in the map-point KNN graph.
    pub knn_k: usize,
    pub agent_map_radius: f64,
    pub agent_agent_radius: f64,
    /// Temporal attention window in steps; 0 attends over the full history.
    pub temporal_window: usize,
    /// Weight-shared refinement iterations in the decoder.
    pub refine_steps: usize,
    pub caip: CaipConfig,
    /// Also gate encoder-side agent-map attention through the pruning module
    /// (the decoder side is always gated).
    pub caip_in_encoder: bool,
    /// Floor added to every positive-mapped scale output.
    pub scale_floor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            heads: 2,
            encoder_rounds: 2,
            knn_k: 6,
            agent_map_radius: 50.0,
            agent_agent_radius: 50.0,
            temporal_window: 0,
            refine_steps: 2,
            caip: CaipConfig::default(),
            caip_in_encoder: false,
            scale_floor: 1e-3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.heads == 0 {
            return Err(Error::invalid("hidden_dim and heads must be >= 1"));
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.knn_k == 0 {
            return Err(Error::invalid("knn_k must be >= 1"));
        }
        if !(self.agent_map_radius.is_finite() && self.agent_map_radius > 0.0)
            || !(self.agent_agent_radius.is_finite() && self.agent_agent_radius > 0.0)
        {
            return Err(Error::invalid("radii must be > 0"));
        }
        if !(self.scale_floor.is_finite() && self.scale_floor > 0.0) {
            return Err(Error::invalid("scale_floor must be > 0"));
        }
        if !(self.caip.tau_init.is_finite() && self.caip.tau_init > 0.0) {
            return Err(Error::invalid("caip.tau_init must be > 0"));
        }
        if !(self.caip.theta_init.is_finite() && self.caip.theta_init > 0.0 && self.caip.theta_init < 1.0) {
            return Err(Error::invalid("caip.theta_init must be in (0, 1)"));
        }
        Ok(())
    }
}

/// One forward pass over a scene: the session holding the graph plus the
/// decoder output and extracted encoder embeddings.
pub struct SceneForward<'a> {
    pub sess: Session<'a>,
    pub output: DecodeOutput,
    /// Final polygon embeddings (values).
    pub map_embedding: Array2<f64>,
    /// Final per-(agent, step) embeddings (values).
    pub agent_embedding: Array2<f64>,
    /// Validity of each agent-embedding row.
    pub agent_row_valid: Vec<bool>,
}

/// The full network with its parameters.
pub struct LaNetModel {
    config: ModelConfig,
    problem: ProblemConfig,
    store: ParamStore,
    map: MapEncoderDef,
    agents: AgentEncoderDef,
    caip: CaipDef,
    decoder: DecoderDef,
}

impl LaNetModel {
    pub fn new(config: ModelConfig, problem: ProblemConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        problem.validate().map_err(Error::InvalidArgument)?;
        let d = config.hidden_dim;
        let map = MapEncoderDef::new("map", d, config.heads, config.encoder_rounds, config.knn_k);
        let agents = AgentEncoderDef::new(
            "agent",
            d,
            config.heads,
            config.encoder_rounds,
            config.temporal_window,
            config.agent_map_radius,
            config.agent_agent_radius,
        );
        let caip = CaipDef::new("caip", config.caip);
        let decoder = DecoderDef::new(
            "decoder",
            d,
            config.heads,
            problem.num_modes,
            problem.future_steps,
            config.refine_steps,
            config.agent_map_radius,
            config.agent_agent_radius,
            config.scale_floor,
        );
        let mut store = ParamStore::new(seed);
        map.register(&mut store);
        agents.register(&mut store);
        caip.register(&mut store);
        decoder.register(&mut store);
        Ok(Self {
            config,
            problem,
            store,
            map,
            agents,
            caip,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn problem(&self) -> &ProblemConfig {
        &self.problem
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn caip(&self) -> &CaipDef {
        &self.caip
    }

    /// Reject scenes whose shape disagrees with the model's problem config.
    pub fn check_scene(&self, scene: &Scene) -> Result<()> {
        let mut divergent = Vec::new();
        if scene.config.history_steps != self.problem.history_steps {
            divergent.push(format!(
                "history_steps: scene {} vs model {}",
                scene.config.history_steps, self.problem.history_steps
            ));
        }
        if scene.config.future_steps != self.problem.future_steps {
            divergent.push(format!(
                "future_steps: scene {} vs model {}",
                scene.config.future_steps, self.problem.future_steps
            ));
        }
        if divergent.is_empty() {
            Ok(())
        } else {
            Err(Error::CheckpointMismatch(divergent.join("; ")))
        }
    }

    /// Full forward pass. `trainable` controls gradient bookkeeping;
    /// `theta_override` evaluates under a forced pruning threshold.
    pub fn forward<'a>(
        &'a self,
        scene: &Scene,
        trainable: bool,
        theta_override: Option<f64>,
    ) -> Result<SceneForward<'a>> {
        self.check_scene(scene)?;
        let mut sess = if trainable {
            Session::new(&self.store)
        } else {
            Session::frozen(&self.store)
        };
        let map_enc = self.map.forward(&mut sess, scene)?;
        let encoder_caip = if self.config.caip_in_encoder {
            Some(&self.caip)
        } else {
            None
        };
        let agent_enc = self.agents.forward(
            &mut sess,
            scene,
            map_enc.x_map,
            &map_enc.edges.polygon_anchors,
            encoder_caip,
        )?;
        let output = self.decoder.forward(
            &mut sess,
            scene,
            map_enc.x_map,
            &map_enc.edges.polygon_anchors,
            &agent_enc,
            &self.caip,
            theta_override,
        )?;
        let map_embedding = sess.g.value(map_enc.x_map).clone();
        let agent_embedding = sess.g.value(agent_enc.x_agent).clone();
        Ok(SceneForward {
            sess,
            output,
            map_embedding,
            agent_embedding,
            agent_row_valid: agent_enc.step_valid,
        })
    }

    /// Save a versioned checkpoint.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut params = BTreeMap::new();
        for (name, value) in self.store.entries() {
            params.insert(
                name.to_string(),
                ParamBlob {
                    rows: value.nrows(),
                    cols: value.ncols(),
                    data: value.iter().copied().collect(),
                },
            );
        }
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            seed: self.store.seed(),
            model: self.config,
            problem: self.problem,
            params,
        };
        let mut text = serde_json::to_string_pretty(&ckpt).expect("checkpoint serialization");
        text.push('\n');
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Load a checkpoint, refusing on version or architecture mismatch.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "version: file {} vs supported {CHECKPOINT_VERSION}",
                ckpt.version
            )));
        }
        let mut model = LaNetModel::new(ckpt.model, ckpt.problem, ckpt.seed)?;
        let expected: Vec<String> = model.store.names().map(str::to_string).collect();
        let got: Vec<String> = ckpt.params.keys().cloned().collect();
        if expected != got {
            let missing: Vec<&String> =
                expected.iter().filter(|n| !ckpt.params.contains_key(*n)).collect();
            let extra: Vec<&String> = got
                .iter()
                .filter(|n| !expected.contains(n))
                .collect();
            return Err(Error::CheckpointMismatch(format!(
                "parameter names diverge (missing {missing:?}, unexpected {extra:?})"
            )));
        }
        for (name, blob) in &ckpt.params {
            let current = model.store.value(name);
            if current.nrows() != blob.rows || current.ncols() != blob.cols {
                return Err(Error::CheckpointMismatch(format!(
                    "{name}: shape {}x{} vs expected {}x{}",
                    blob.rows,
                    blob.cols,
                    current.nrows(),
                    current.ncols()
                )));
            }
            if blob.data.len() != blob.rows * blob.cols {
                return Err(Error::CheckpointMismatch(format!(
                    "{name}: data length {} for shape {}x{}",
                    blob.data.len(),
                    blob.rows,
                    blob.cols
                )));
            }
            let arr = Array2::from_shape_vec((blob.rows, blob.cols), blob.data.clone()).unwrap();
            model.store.set(name, arr);
        }
        Ok(model)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamBlob {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    seed: u64,
    model: ModelConfig,
    problem: ProblemConfig,
    params: BTreeMap<String, ParamBlob>,
}

/// Forecasts paired with agent ids for one scene.
pub fn predict_scene(model: &LaNetModel, scene: &Scene, theta_override: Option<f64>) -> Result<Vec<Forecast>> {
    let fwd = model.forward(scene, false, theta_override)?;
    Ok(fwd
        .output
        .refined
        .iter()
        .zip(&fwd.output.target_agents)
        .map(|(fv, &idx)| {
            forecast_from_vars(
                &fwd.sess,
                fv,
                &scene.agents[idx].agent_id,
                model.problem.num_modes,
                model.problem.future_steps,
            )
        })
        .collect())
}
