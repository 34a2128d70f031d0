//! Propose-and-refine multimodal decoder.
//!
//! Agent embeddings at the most recent observed step are duplicated across K
//! mode queries (a learned mode-index embedding is the sole symmetry
//! breaker). The proposal stack runs temporal cross-attention over the
//! agent's own history, agent-map attention over pruned candidate edges,
//! agent-agent attention at the most recent step, and cross-mode
//! self-attention, then decodes anchor-free trajectories as cumulative
//! per-step offsets from the last observed pose. Refinement conditions the
//! mode embeddings on an embedding of the proposal and re-runs an
//! independently parameterized copy of the same stack for a configured
//! number of weight-shared iterations; its head emits a delta on the raw
//! proposal outputs, so zero-initialized refinement is exactly the identity.

use ndarray::{arr2, Array2};
use serde::{Deserialize, Serialize};

use crate::agent_encoder::AgentEncoding;
use crate::caip::{self, CaipDef};
use crate::error::{Error, Result};
use crate::geometry::{rel_feature, EdgeList, Pose2, RelFeature, REL_FEATURE_DIM};
use crate::nn::graph::Var;
use crate::nn::{AttentionDef, EmbeddingDef, MlpDef, ParamStore, Session};
use crate::scene::Scene;

/// Raw head output width per future step:
/// `[dx, dy, scale_raw_x, scale_raw_y, heading_sin, heading_cos, conf_raw]`.
const RAW_PER_STEP: usize = 7;

/// One agent's forecast as graph nodes, shaped for the objective.
pub struct ForecastVars {
    /// Scene-frame locations, `(K*T) × 2`.
    pub locations: Var,
    /// Positive per-step Laplace scales, `(K*T) × 2`.
    pub scales: Var,
    /// Wrapped scene-frame headings, `(K*T) × 1`.
    pub headings: Var,
    /// Positive Laplace scale of the angular error, `(K*T) × 1`.
    pub heading_scale: Var,
    /// Heading confidence in (0, 1), `(K*T) × 1`.
    pub heading_conf: Var,
    /// Mode logits, `1 × K`. A constant (uniform) leaf for proposals.
    pub logits: Var,
    /// Cumulative agent-frame offsets, `(K*T) × 2`; refinement conditioning.
    pub local_cum: Var,
    /// Raw heading sin/cos, `(K*T) × 2`.
    pub heading_uv: Var,
}

/// Forecast for one target agent as plain numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeForecast {
    pub locations: Vec<[f64; 2]>,
    pub scales: Vec<[f64; 2]>,
    pub headings: Vec<f64>,
    pub heading_confidence: Vec<f64>,
}

/// K scored trajectory modes for one target agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub agent_id: String,
    /// Mixing probabilities, a simplex over the K modes.
    pub mode_probs: Vec<f64>,
    pub modes: Vec<ModeForecast>,
}

impl Forecast {
    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn future_steps(&self) -> usize {
        self.modes.first().map_or(0, |m| m.locations.len())
    }
}

/// Decoder output: per-target forecasts from both stages plus pruning stats.
pub struct DecodeOutput {
    /// Scene agent index per forecast slot.
    pub target_agents: Vec<usize>,
    pub proposal: Vec<ForecastVars>,
    pub refined: Vec<ForecastVars>,
    /// Agent-map candidate edges before and after the hard threshold.
    pub candidate_edges: usize,
    pub kept_edges: usize,
}

/// Parameter group of the decoder.
#[derive(Debug, Clone)]
pub struct DecoderDef {
    dim: usize,
    num_modes: usize,
    future_steps: usize,
    refine_steps: usize,
    map_radius: f64,
    social_radius: f64,
    scale_floor: f64,
    mode_emb: EmbeddingDef,
    r_temporal: MlpDef,
    r_map: MlpDef,
    r_social: MlpDef,
    propose_temporal: AttentionDef,
    propose_map: AttentionDef,
    propose_social: AttentionDef,
    propose_mode: AttentionDef,
    refine_temporal: AttentionDef,
    refine_map: AttentionDef,
    refine_social: AttentionDef,
    refine_mode: AttentionDef,
    traj_embed: MlpDef,
    head_propose: MlpDef,
    head_refine: MlpDef,
    head_cls: MlpDef,
}

impl DecoderDef {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        dim: usize,
        heads: usize,
        num_modes: usize,
        future_steps: usize,
        refine_steps: usize,
        map_radius: f64,
        social_radius: f64,
        scale_floor: f64,
    ) -> Self {
        Self {
            dim,
            num_modes,
            future_steps,
            refine_steps,
            map_radius,
            social_radius,
            scale_floor,
            mode_emb: EmbeddingDef::new(format!("{name}.mode_emb"), num_modes, dim),
            r_temporal: MlpDef::new(format!("{name}.r_temporal"), &[REL_FEATURE_DIM, dim, dim]),
            r_map: MlpDef::new(format!("{name}.r_map"), &[REL_FEATURE_DIM, dim, dim]),
            r_social: MlpDef::new(format!("{name}.r_social"), &[REL_FEATURE_DIM, dim, dim]),
            propose_temporal: AttentionDef::new(format!("{name}.propose.temporal"), dim, heads),
            propose_map: AttentionDef::new(format!("{name}.propose.map"), dim, heads),
            propose_social: AttentionDef::new(format!("{name}.propose.social"), dim, heads),
            propose_mode: AttentionDef::new(format!("{name}.propose.mode"), dim, heads)
                .without_rel_encoding(),
            refine_temporal: AttentionDef::new(format!("{name}.refine.temporal"), dim, heads),
            refine_map: AttentionDef::new(format!("{name}.refine.map"), dim, heads),
            refine_social: AttentionDef::new(format!("{name}.refine.social"), dim, heads),
            refine_mode: AttentionDef::new(format!("{name}.refine.mode"), dim, heads)
                .without_rel_encoding(),
            traj_embed: MlpDef::new(format!("{name}.traj_embed"), &[future_steps * 4, dim, dim]),
            head_propose: MlpDef::new(format!("{name}.head_propose"), &[dim, dim, future_steps * RAW_PER_STEP]),
            head_refine: MlpDef::new(format!("{name}.head_refine"), &[dim, dim, future_steps * RAW_PER_STEP]),
            head_cls: MlpDef::new(format!("{name}.head_cls"), &[dim, dim, 1]).without_final_bias(),
        }
    }

    pub fn register(&self, store: &mut ParamStore) {
        self.mode_emb.register(store);
        self.r_temporal.register(store);
        self.r_map.register(store);
        self.r_social.register(store);
        self.propose_temporal.register(store);
        self.propose_map.register(store);
        self.propose_social.register(store);
        self.propose_mode.register(store);
        self.refine_temporal.register(store);
        self.refine_map.register(store);
        self.refine_social.register(store);
        self.refine_mode.register(store);
        self.traj_embed.register(store);
        self.head_propose.register(store);
        self.head_refine.register(store);
        self.head_cls.register(store);
    }

    fn rel_matrix(rels: &[RelFeature]) -> Array2<f64> {
        let mut out = Array2::zeros((rels.len(), REL_FEATURE_DIM));
        for (i, r) in rels.iter().enumerate() {
            for (j, v) in r.features().iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }

    /// Decode raw head rows `(n_targets*K) × (T*7)` into per-agent forecast
    /// variables anchored at each agent's last observed pose.
    fn decode_raw(
        &self,
        sess: &mut Session,
        raw_rows: Var,
        anchors: &[Pose2],
        logits: Option<Var>,
    ) -> Vec<ForecastVars> {
        let k = self.num_modes;
        let t = self.future_steps;
        let mut out = Vec::with_capacity(anchors.len());
        for (slot, anchor) in anchors.iter().enumerate() {
            let rows: Vec<usize> = (slot * k..(slot + 1) * k).collect();
            let per_agent = sess.g.gather_rows(raw_rows, &rows);
            let flat = sess.g.reshape(per_agent, k * t, RAW_PER_STEP);
            let offsets = sess.g.slice_cols(flat, 0, 2);
            let scale_raw = sess.g.slice_cols(flat, 2, 4);
            let heading_uv = sess.g.slice_cols(flat, 4, 6);
            let conf_raw = sess.g.slice_cols(flat, 6, 7);

            let local_cum = sess.g.block_cumsum_rows(offsets, t);
            let (s, c) = anchor.heading.sin_cos();
            let rot_t = sess.g.leaf(arr2(&[[c, s], [-s, c]]));
            let rotated = sess.g.matmul(local_cum, rot_t);
            let origin = sess.g.leaf(arr2(&[[anchor.x, anchor.y]]));
            let locations = sess.g.add_row(rotated, origin);

            let sp = sess.g.softplus(scale_raw);
            let scales = sess.g.add_scalar(sp, self.scale_floor);

            let u = sess.g.slice_cols(heading_uv, 0, 1);
            let v = sess.g.slice_cols(heading_uv, 1, 2);
            let delta = sess.g.atan2(u, v);
            let shifted = sess.g.add_scalar(delta, anchor.heading);
            let headings = sess.g.wrap_angle(shifted);

            let heading_conf = sess.g.sigmoid(conf_raw);
            let neg_conf = sess.g.neg(conf_raw);
            let hs = sess.g.softplus(neg_conf);
            let heading_scale = sess.g.add_scalar(hs, self.scale_floor);

            let logits = match logits {
                Some(l) => {
                    let col = sess.g.gather_rows(l, &rows);
                    sess.g.transpose(col)
                }
                None => sess.g.zeros_leaf(1, k),
            };
            out.push(ForecastVars {
                locations,
                scales,
                headings,
                heading_scale,
                heading_conf,
                logits,
                local_cum,
                heading_uv,
            });
        }
        out
    }

    /// Embedding of a proposal's trajectory used to condition refinement:
    /// per mode, the flattened agent-frame cumulative offsets and heading
    /// sin/cos per step.
    fn embed_trajectory(&self, sess: &mut Session, proposal: &[ForecastVars]) -> Result<Var> {
        let k = self.num_modes;
        let t = self.future_steps;
        let mut per_agent = Vec::with_capacity(proposal.len());
        for fv in proposal {
            let offs = sess.g.reshape(fv.local_cum, k, t * 2);
            let uv = sess.g.reshape(fv.heading_uv, k, t * 2);
            per_agent.push(sess.g.concat_cols(&[offs, uv]));
        }
        let joined = sess.g.concat_rows(&per_agent);
        self.traj_embed.forward(sess, joined)
    }

    /// Run the decoder over encoded scene context.
    ///
    /// `theta_override` forces the hard pruning threshold, which is how
    /// threshold sweeps are evaluated; the soft weighting always uses the
    /// learned threshold, so a sweep row measures pruning alone.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        sess: &mut Session,
        scene: &Scene,
        x_map: Var,
        map_anchors: &[Pose2],
        agent_enc: &AgentEncoding,
        caip_def: &CaipDef,
        theta_override: Option<f64>,
    ) -> Result<DecodeOutput> {
        let h = scene.config.history_steps;
        let k = self.num_modes;
        let targets: Vec<usize> = scene
            .agents
            .iter()
            .enumerate()
            .filter(|(i, a)| a.is_target && agent_enc.last_step[*i].is_some())
            .map(|(i, _)| i)
            .collect();
        if targets.is_empty() {
            return Ok(DecodeOutput {
                target_agents: targets,
                proposal: Vec::new(),
                refined: Vec::new(),
                candidate_edges: 0,
                kept_edges: 0,
            });
        }
        let anchor_poses: Vec<Pose2> = targets
            .iter()
            .map(|&a| scene.agents[a].states[agent_enc.last_step[a].unwrap()].pose())
            .collect();

        // Mode queries: last-step embedding replicated K times + mode index embedding.
        let last_rows: Vec<usize> = targets
            .iter()
            .flat_map(|&a| {
                let row = a * h + agent_enc.last_step[a].unwrap();
                std::iter::repeat_n(row, k)
            })
            .collect();
        let mode_idx: Vec<usize> = (0..targets.len()).flat_map(|_| 0..k).collect();
        let base = sess.g.gather_rows(agent_enc.x_agent, &last_rows);
        let modes = self.mode_emb.lookup(sess, &mode_idx)?;
        let mut m = sess.g.add(base, modes);
        debug_assert_eq!(sess.g.cols(m), self.dim);

        // Temporal cross-attention edges: each valid observed step of the
        // agent feeds all of its mode queries.
        let mut temporal = EdgeList::new();
        for (slot, &a) in targets.iter().enumerate() {
            let last = agent_enc.last_step[a].unwrap();
            let anchor = anchor_poses[slot];
            for t_step in 0..h {
                if !scene.agents[a].valid[t_step] {
                    continue;
                }
                let pose = scene.agents[a].states[t_step].pose();
                let rel = rel_feature(&pose, &anchor, last.saturating_sub(t_step));
                for mode in 0..k {
                    temporal.push(a * h + t_step, slot * k + mode, rel);
                }
            }
        }

        // Agent-map candidates from the last observed pose, pruned by CAIP.
        let mut candidates = EdgeList::new();
        for (slot, anchor) in anchor_poses.iter().enumerate() {
            for (pi, pl_anchor) in map_anchors.iter().enumerate() {
                if pl_anchor.distance(anchor) <= self.map_radius {
                    candidates.push(pi, slot, rel_feature(pl_anchor, anchor, 0));
                }
            }
        }
        let (map_edges, gate, kept_count) = if candidates.is_empty() {
            (EdgeList::new(), None, 0)
        } else {
            let feats = sess
                .g
                .leaf(caip::edge_features(&candidates.rel, self.map_radius));
            let scores = caip_def.score_edges(sess, feats)?;
            let score_vals: Vec<f64> = sess.g.value(scores).column(0).to_vec();
            let theta_val = theta_override.unwrap_or_else(|| caip_def.theta_value(sess.store()));
            let pruned = caip::prune_edges(&candidates, &score_vals, theta_val, &candidates.targets, true);
            let kept_scores = sess.g.gather_rows(scores, &pruned.kept_indices);
            let theta = caip_def.theta(sess);
            let inv_tau = caip_def.inv_tau(sess);
            let weights = caip::soft_weights(
                sess,
                kept_scores,
                theta,
                inv_tau,
                &pruned.kept.targets,
                targets.len(),
                caip_def.sign(),
            );
            // Expand kept per-agent edges across that agent's K mode queries.
            let mut expanded = EdgeList::with_capacity(pruned.kept.len() * k);
            let mut weight_rows = Vec::with_capacity(pruned.kept.len() * k);
            for i in 0..pruned.kept.len() {
                for mode in 0..k {
                    expanded.push(
                        pruned.kept.sources[i],
                        pruned.kept.targets[i] * k + mode,
                        pruned.kept.rel[i],
                    );
                    weight_rows.push(i);
                }
            }
            let gate = sess.g.gather_rows(weights, &weight_rows);
            (expanded, Some(gate), pruned.kept.len())
        };
        let candidate_count = candidates.len();

        // Agent-agent edges at the most recent step.
        let mut social = EdgeList::new();
        for (slot, &a) in targets.iter().enumerate() {
            let anchor = anchor_poses[slot];
            for (b, track) in scene.agents.iter().enumerate() {
                if b == a {
                    continue;
                }
                let Some(last_b) = agent_enc.last_step[b] else {
                    continue;
                };
                let pose_b = track.states[last_b].pose();
                if pose_b.distance(&anchor) <= self.social_radius {
                    let rel = rel_feature(&pose_b, &anchor, 0);
                    for mode in 0..k {
                        social.push(b * h + last_b, slot * k + mode, rel);
                    }
                }
            }
        }

        // Cross-mode self-attention edges: complete digraph per agent,
        // no self-loops.
        let mut cross_mode = EdgeList::new();
        for slot in 0..targets.len() {
            for k1 in 0..k {
                for k2 in 0..k {
                    if k1 != k2 {
                        cross_mode.push(slot * k + k1, slot * k + k2, RelFeature::zero());
                    }
                }
            }
        }

        let r_t = {
            let raw = sess.g.leaf(Self::rel_matrix(&temporal.rel));
            self.r_temporal.forward(sess, raw)?
        };
        let r_m = {
            let raw = sess.g.leaf(Self::rel_matrix(&map_edges.rel));
            self.r_map.forward(sess, raw)?
        };
        let r_s = {
            let raw = sess.g.leaf(Self::rel_matrix(&social.rel));
            self.r_social.forward(sess, raw)?
        };
        // Proposal stack.
        m = self.propose_temporal.forward(sess, m, agent_enc.x_agent, &temporal, Some(r_t), None)?;
        m = self.propose_map.forward(sess, m, x_map, &map_edges, Some(r_m), gate)?;
        m = self.propose_social.forward(sess, m, agent_enc.x_agent, &social, Some(r_s), None)?;
        m = self.propose_mode.forward(sess, m, m, &cross_mode, None, None)?;

        let raw_propose = self.head_propose.forward(sess, m)?;
        let proposal = self.decode_raw(sess, raw_propose, &anchor_poses, None);

        // Refinement: condition on the proposal, rerun the stack
        // (weight-shared), emit a delta on the raw outputs.
        let cond = self.embed_trajectory(sess, &proposal)?;
        let mut mr = sess.g.add(m, cond);
        for _ in 0..self.refine_steps {
            mr = self.refine_temporal.forward(sess, mr, agent_enc.x_agent, &temporal, Some(r_t), None)?;
            mr = self.refine_map.forward(sess, mr, x_map, &map_edges, Some(r_m), gate)?;
            mr = self.refine_social.forward(sess, mr, agent_enc.x_agent, &social, Some(r_s), None)?;
            mr = self.refine_mode.forward(sess, mr, mr, &cross_mode, None, None)?;
        }
        let delta = self.head_refine.forward(sess, mr)?;
        let raw_refined = sess.g.add(raw_propose, delta);
        let logits = self.head_cls.forward(sess, mr)?;
        let refined = self.decode_raw(sess, raw_refined, &anchor_poses, Some(logits));

        Ok(DecodeOutput {
            target_agents: targets,
            proposal,
            refined,
            candidate_edges: candidate_count,
            kept_edges: kept_count,
        })
    }
}

/// Extract plain forecasts from graph values.
pub fn forecast_from_vars(
    sess: &Session,
    fv: &ForecastVars,
    agent_id: &str,
    num_modes: usize,
    future_steps: usize,
) -> Forecast {
    let loc = sess.g.value(fv.locations);
    let sc = sess.g.value(fv.scales);
    let hd = sess.g.value(fv.headings);
    let conf = sess.g.value(fv.heading_conf);
    let logits = sess.g.value(fv.logits);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mode_probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let mut modes = Vec::with_capacity(num_modes);
    for k in 0..num_modes {
        let mut m = ModeForecast {
            locations: Vec::with_capacity(future_steps),
            scales: Vec::with_capacity(future_steps),
            headings: Vec::with_capacity(future_steps),
            heading_confidence: Vec::with_capacity(future_steps),
        };
        for t in 0..future_steps {
            let r = k * future_steps + t;
            m.locations.push([loc[(r, 0)], loc[(r, 1)]]);
            m.scales.push([sc[(r, 0)], sc[(r, 1)]]);
            m.headings.push(hd[(r, 0)]);
            m.heading_confidence.push(conf[(r, 0)]);
        }
        modes.push(m);
    }
    Forecast {
        agent_id: agent_id.to_string(),
        mode_probs,
        modes,
    }
}

/// Ground-truth future of one agent, aligned with forecast steps.
#[derive(Debug, Clone)]
pub struct Truth {
    pub positions: Vec<[f64; 2]>,
    pub headings: Vec<f64>,
    pub valid: Vec<bool>,
}

impl Truth {
    /// Future slice of a track under the scene's problem config.
    pub fn from_track(track: &crate::scene::AgentTrack, h: usize, t: usize) -> Self {
        let mut positions = Vec::with_capacity(t);
        let mut headings = Vec::with_capacity(t);
        let mut valid = Vec::with_capacity(t);
        for step in h..h + t {
            positions.push([track.states[step].x, track.states[step].y]);
            headings.push(track.states[step].heading);
            valid.push(track.valid[step]);
        }
        Self {
            positions,
            headings,
            valid,
        }
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Error if no step is valid; forecasting such an agent is meaningless.
    pub fn require_valid(&self) -> Result<()> {
        if self.num_valid() == 0 {
            return Err(Error::invalid(
                "truth has no valid future step; agent should have been filtered",
            ));
        }
        Ok(())
    }
}
