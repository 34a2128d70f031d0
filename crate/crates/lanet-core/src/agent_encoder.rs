//! Agent history encoding: per-step motion features fused with the map and
//! with neighboring agents through temporal, agent-map, and agent-agent
//! attention, repeated for a configured number of weight-shared rounds.
//!
//! Rows of `x_agent` are `(agent, observed step)` pairs flattened as
//! `agent * H + step`. Masked steps keep a row (so shapes stay rectangular)
//! but have no incident edges and are never read downstream.

use ndarray::Array2;

use crate::caip::{self, CaipDef};
use crate::error::Result;
use crate::geometry::{radius_graph, rel_feature, EdgeList, Pose2, REL_FEATURE_DIM};
use crate::nn::graph::Var;
use crate::nn::{AttentionDef, EmbeddingDef, MlpDef, ParamStore, Session};
use crate::scene::{agent_feature_tensor, AgentType, Scene, AGENT_FEATURE_DIM};

/// Temporal edges for one track: step `s` feeds step `t` iff
/// `0 < t - s <= window` and both steps are valid. The relative feature
/// carries the pose change and the step gap.
pub fn temporal_edges_for_track(
    poses: &[Pose2],
    valid: &[bool],
    history_steps: usize,
    window: usize,
) -> EdgeList {
    let h = history_steps.min(valid.len());
    let mut edges = EdgeList::new();
    for t in 0..h {
        if !valid[t] {
            continue;
        }
        for s in t.saturating_sub(window)..t {
            if valid[s] {
                edges.push(s, t, rel_feature(&poses[s], &poses[t], t - s));
            }
        }
    }
    edges
}

/// Temporal edges for every agent, in the flattened `(agent, step)` row
/// space.
pub fn build_temporal_edges(scene: &Scene, window: usize) -> EdgeList {
    let h = scene.config.history_steps;
    let mut edges = EdgeList::new();
    for (a, track) in scene.agents.iter().enumerate() {
        let poses: Vec<Pose2> = track.states[..h].iter().map(|s| s.pose()).collect();
        let per = temporal_edges_for_track(&poses, &track.valid[..h], h, window);
        for i in 0..per.len() {
            edges.push(a * h + per.sources[i], a * h + per.targets[i], per.rel[i]);
        }
    }
    edges
}

/// Agent-map edges: polygon anchors within `radius` of each valid step pose.
pub fn build_agent_map_edges(
    scene: &Scene,
    anchors: &[Pose2],
    radius: f64,
) -> Result<EdgeList> {
    let h = scene.config.history_steps;
    let n_rows = scene.agents.len() * h;
    let mut step_poses = Vec::with_capacity(n_rows);
    let mut step_valid = Vec::with_capacity(n_rows);
    for track in &scene.agents {
        for t in 0..h {
            step_poses.push(track.states[t].pose());
            step_valid.push(track.valid[t]);
        }
    }
    if anchors.is_empty() {
        return Ok(EdgeList::new());
    }
    let src_valid = vec![true; anchors.len()];
    radius_graph(anchors, &step_poses, radius, &src_valid, &step_valid)
}

/// Agent-agent edges: per timestep, each valid agent attends to every other
/// valid agent within `radius`. No self-edges.
pub fn build_agent_agent_edges(scene: &Scene, radius: f64) -> Result<EdgeList> {
    let h = scene.config.history_steps;
    let n = scene.agents.len();
    let mut edges = EdgeList::new();
    for t in 0..h {
        for dst in 0..n {
            if !scene.agents[dst].valid[t] {
                continue;
            }
            let dst_pose = scene.agents[dst].states[t].pose();
            for src in 0..n {
                if src == dst || !scene.agents[src].valid[t] {
                    continue;
                }
                let src_pose = scene.agents[src].states[t].pose();
                if src_pose.distance(&dst_pose) <= radius {
                    edges.push(src * h + t, dst * h + t, rel_feature(&src_pose, &dst_pose, 0));
                }
            }
        }
    }
    Ok(edges)
}

/// Parameter group of the agent encoder.
#[derive(Debug, Clone)]
pub struct AgentEncoderDef {
    dim: usize,
    rounds: usize,
    /// 0 means attend over the full history.
    window: usize,
    map_radius: f64,
    social_radius: f64,
    type_emb: EmbeddingDef,
    raw: MlpDef,
    r_temporal: MlpDef,
    r_map: MlpDef,
    r_social: MlpDef,
    att_temporal: AttentionDef,
    att_map: AttentionDef,
    att_social: AttentionDef,
}

/// Encoder output plus the row bookkeeping the decoder needs.
pub struct AgentEncoding {
    /// `(num_agents * H) × dim` per-step embeddings.
    pub x_agent: Var,
    pub step_poses: Vec<Pose2>,
    pub step_valid: Vec<bool>,
    /// Last valid observed step per agent.
    pub last_step: Vec<Option<usize>>,
}

impl AgentEncoderDef {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        dim: usize,
        heads: usize,
        rounds: usize,
        window: usize,
        map_radius: f64,
        social_radius: f64,
    ) -> Self {
        let cat = (dim / 2).max(1);
        Self {
            dim,
            rounds,
            window,
            map_radius,
            social_radius,
            type_emb: EmbeddingDef::new(format!("{name}.type_emb"), AgentType::COUNT, cat),
            raw: MlpDef::new(format!("{name}.raw"), &[AGENT_FEATURE_DIM + cat, dim, dim]),
            r_temporal: MlpDef::new(format!("{name}.r_temporal"), &[REL_FEATURE_DIM, dim, dim]),
            r_map: MlpDef::new(format!("{name}.r_map"), &[REL_FEATURE_DIM, dim, dim]),
            r_social: MlpDef::new(format!("{name}.r_social"), &[REL_FEATURE_DIM, dim, dim]),
            att_temporal: AttentionDef::new(format!("{name}.att_temporal"), dim, heads),
            att_map: AttentionDef::new(format!("{name}.att_map"), dim, heads),
            att_social: AttentionDef::new(format!("{name}.att_social"), dim, heads),
        }
    }

    pub fn register(&self, store: &mut ParamStore) {
        self.type_emb.register(store);
        self.raw.register(store);
        self.r_temporal.register(store);
        self.r_map.register(store);
        self.r_social.register(store);
        self.att_temporal.register(store);
        self.att_map.register(store);
        self.att_social.register(store);
    }

    fn rel_matrix(edges: &EdgeList) -> Array2<f64> {
        let mut out = Array2::zeros((edges.len(), REL_FEATURE_DIM));
        for (i, r) in edges.rel.iter().enumerate() {
            for (j, v) in r.features().iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }

    /// Initial per-step embeddings from the motion feature tensor plus the
    /// agent-type embedding.
    pub fn embed_agents(&self, sess: &mut Session, scene: &Scene) -> Result<Var> {
        let h = scene.config.history_steps;
        let n_rows = scene.agents.len() * h;
        let mut numeric = Array2::zeros((n_rows, AGENT_FEATURE_DIM));
        let mut type_idx = Vec::with_capacity(n_rows);
        for (a, track) in scene.agents.iter().enumerate() {
            let feats = agent_feature_tensor(track, &scene.config);
            for t in 0..h {
                for (c, v) in feats.features[t].iter().enumerate() {
                    numeric[(a * h + t, c)] = *v;
                }
                type_idx.push(track.agent_type.index());
            }
        }
        let num = sess.g.leaf(numeric);
        let ty = self.type_emb.lookup(sess, &type_idx)?;
        let joined = sess.g.concat_cols(&[num, ty]);
        self.raw.forward(sess, joined)
    }

    /// Full agent encoding. `x_map` and `anchors` come from the map encoder;
    /// `caip` optionally gates the encoder-side agent-map attention.
    pub fn forward(
        &self,
        sess: &mut Session,
        scene: &Scene,
        x_map: Var,
        anchors: &[Pose2],
        caip: Option<&CaipDef>,
    ) -> Result<AgentEncoding> {
        let h = scene.config.history_steps;
        let window = if self.window == 0 { h } else { self.window };
        let mut x = self.embed_agents(sess, scene)?;

        let temporal = build_temporal_edges(scene, window);
        let map_edges_all = build_agent_map_edges(scene, anchors, self.map_radius)?;
        let social = build_agent_agent_edges(scene, self.social_radius)?;

        // Optional pruning of encoder-side agent-map interactions.
        let (map_edges, map_gate_inputs) = if let Some(caip_def) = caip {
            let feats = caip::edge_features(&map_edges_all.rel, self.map_radius);
            let feats_var = sess.g.leaf(feats);
            let scores = caip_def.score_edges(sess, feats_var)?;
            let score_vals: Vec<f64> = sess.g.value(scores).column(0).to_vec();
            let theta = caip_def.theta_value(sess.store());
            let pruned = caip::prune_edges(
                &map_edges_all,
                &score_vals,
                theta,
                &map_edges_all.targets,
                false,
            );
            (pruned.kept.clone(), Some((scores, pruned)))
        } else {
            (map_edges_all, None)
        };

        let r_t = {
            let raw = sess.g.leaf(Self::rel_matrix(&temporal));
            self.r_temporal.forward(sess, raw)?
        };
        let r_m = {
            let raw = sess.g.leaf(Self::rel_matrix(&map_edges));
            self.r_map.forward(sess, raw)?
        };
        let r_s = {
            let raw = sess.g.leaf(Self::rel_matrix(&social));
            self.r_social.forward(sess, raw)?
        };

        let gate = if let Some((scores, pruned)) = &map_gate_inputs {
            if pruned.kept.is_empty() {
                None
            } else {
                let caip_def = caip.unwrap();
                let kept_scores = sess.g.gather_rows(*scores, &pruned.kept_indices);
                let theta = caip_def.theta(sess);
                let inv_tau = caip_def.inv_tau(sess);
                let n_rows = scene.agents.len() * h;
                Some(caip::soft_weights(
                    sess,
                    kept_scores,
                    theta,
                    inv_tau,
                    &pruned.kept.targets,
                    n_rows,
                    caip_def.sign(),
                ))
            }
        } else {
            None
        };

        for _ in 0..self.rounds {
            x = self.att_temporal.forward(sess, x, x, &temporal, Some(r_t), None)?;
            x = self.att_map.forward(sess, x, x_map, &map_edges, Some(r_m), gate)?;
            x = self.att_social.forward(sess, x, x, &social, Some(r_s), None)?;
        }

        let mut step_poses = Vec::new();
        let mut step_valid = Vec::new();
        let mut last_step = Vec::with_capacity(scene.agents.len());
        for track in &scene.agents {
            for t in 0..h {
                step_poses.push(track.states[t].pose());
                step_valid.push(track.valid[t]);
            }
            last_step.push(track.last_observed_step(h));
        }
        debug_assert_eq!(sess.g.cols(x), self.dim);
        Ok(AgentEncoding {
            x_agent: x,
            step_poses,
            step_valid,
            last_step,
        })
    }
}
