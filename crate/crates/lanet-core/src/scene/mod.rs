//! The scene data model: agent tracks, vector-map polygons, typed polygon
//! adjacency, and the per-agent motion feature tensor.
//!
//! Scenes are immutable after construction. [`load_scene`](crate::scene::format::load_scene)
//! rejects malformed input rather than repairing it; every invariant checked
//! by [`Scene::validate`] is documented in `docs/scene-format.md`.

mod format;
mod synth;

pub use format::{load_scene, save_scene, scene_to_canonical_json};
pub use synth::{synthesize_scene, SynthSpec};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::geometry::{wrap_angle, Pose2, RigidTransform};

/// Problem-size knobs shared by generator, model, and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Observed history steps H.
    pub history_steps: usize,
    /// Predicted future steps T.
    pub future_steps: usize,
    /// Trajectory modes K.
    pub num_modes: usize,
    /// Points sampled per generated polyline F.
    pub points_per_polyline: usize,
    /// Seconds between consecutive steps.
    pub step_period: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            history_steps: 10,
            future_steps: 20,
            num_modes: 6,
            points_per_polyline: 10,
            step_period: 0.1,
        }
    }
}

impl ProblemConfig {
    pub fn total_steps(&self) -> usize {
        self.history_steps + self.future_steps
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.history_steps < 1 {
            return Err("config.history_steps must be >= 1".into());
        }
        if self.future_steps < 1 {
            return Err("config.future_steps must be >= 1".into());
        }
        if self.num_modes < 1 {
            return Err("config.num_modes must be >= 1".into());
        }
        if self.points_per_polyline < 1 {
            return Err("config.points_per_polyline must be >= 1".into());
        }
        if self.step_period.is_nan() || self.step_period <= 0.0 || !self.step_period.is_finite() {
            return Err(format!(
                "config.step_period must be > 0, got {}",
                self.step_period
            ));
        }
        Ok(())
    }
}

/// Traffic participant category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
    Bus,
    Motorcyclist,
    Other,
}

impl AgentType {
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        match self {
            AgentType::Vehicle => 0,
            AgentType::Pedestrian => 1,
            AgentType::Cyclist => 2,
            AgentType::Bus => 3,
            AgentType::Motorcyclist => 4,
            AgentType::Other => 5,
        }
    }
}

/// One timestamped agent state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Radians in `(-π, π]`; out-of-range values are rejected at load time.
    pub heading: f64,
    /// Speed magnitude, m/s, >= 0.
    pub velocity: f64,
}

impl AgentState {
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.heading)
    }
}

/// An agent's full observed + future track with per-step validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentTrack {
    pub agent_id: String,
    pub agent_type: AgentType,
    /// Length `H + T`; future steps carry ground truth during training/eval.
    pub states: Vec<AgentState>,
    /// Aligned with `states`. Missing observations are masked, never interpolated.
    pub valid: Vec<bool>,
    pub is_target: bool,
}

impl AgentTrack {
    /// Index of the most recent valid observed step, if any.
    pub fn last_observed_step(&self, history_steps: usize) -> Option<usize> {
        (0..history_steps.min(self.valid.len()))
            .rev()
            .find(|&t| self.valid[t])
    }

    /// Pose at the most recent valid observed step.
    pub fn last_observed_pose(&self, history_steps: usize) -> Option<Pose2> {
        self.last_observed_step(history_steps)
            .map(|t| self.states[t].pose())
    }
}

/// Vector-map element categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolygonKind {
    LaneCenterline,
    LaneBoundary,
    Crosswalk,
    RoadEdge,
}

impl PolygonKind {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            PolygonKind::LaneCenterline => 0,
            PolygonKind::LaneBoundary => 1,
            PolygonKind::Crosswalk => 2,
            PolygonKind::RoadEdge => 3,
        }
    }
}

/// Lane-type tag carried by each polygon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneSemantic {
    Unspecified,
    Normal,
    Bus,
    Bike,
    Pedestrian,
}

impl LaneSemantic {
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        match self {
            LaneSemantic::Unspecified => 0,
            LaneSemantic::Normal => 1,
            LaneSemantic::Bus => 2,
            LaneSemantic::Bike => 3,
            LaneSemantic::Pedestrian => 4,
        }
    }
}

/// A sampled polyline point. Heading is the direction to the next point
/// (the last point copies its predecessor's heading).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyPoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl PolyPoint {
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.heading)
    }
}

/// A typed map polyline with sampled points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapPolygon {
    pub polygon_id: String,
    pub kind: PolygonKind,
    pub semantic: LaneSemantic,
    pub points: Vec<PolyPoint>,
}

impl MapPolygon {
    /// Reference frame for relative encodings to/from this polygon.
    pub fn anchor_pose(&self) -> Pose2 {
        self.points[0].pose()
    }

    /// Total chord length of the polyline.
    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }
}

/// Relation carried by a polygon-to-polygon adjacency edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlRelation {
    Predecessor,
    Successor,
    LeftNeighbor,
    RightNeighbor,
    BoundaryOf,
    Crossing,
}

impl PlRelation {
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        match self {
            PlRelation::Predecessor => 0,
            PlRelation::Successor => 1,
            PlRelation::LeftNeighbor => 2,
            PlRelation::RightNeighbor => 3,
            PlRelation::BoundaryOf => 4,
            PlRelation::Crossing => 5,
        }
    }
}

/// Directed typed edge between polygons, by index into `Scene::polygons`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlEdge {
    pub source: usize,
    pub target: usize,
    pub relation: PlRelation,
}

/// A full traffic scene: the unit of ingestion and prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub scenario_id: String,
    pub config: ProblemConfig,
    pub agents: Vec<AgentTrack>,
    pub polygons: Vec<MapPolygon>,
    pub adjacency: Vec<PlEdge>,
}

/// Tolerance for the point-heading/chord consistency check.
const TANGENT_TOL: f64 = 1e-6;

impl Scene {
    /// Check every type invariant; returns a field-level diagnostic on failure.
    pub fn validate(&self) -> std::result::Result<(), String> {
        self.config.validate()?;
        let total = self.config.total_steps();
        for (i, a) in self.agents.iter().enumerate() {
            let tag = format!("agents[{i}] ({})", a.agent_id);
            if a.states.len() != total {
                return Err(format!(
                    "{tag}: states has length {}, expected H+T = {total}",
                    a.states.len()
                ));
            }
            if a.valid.len() != a.states.len() {
                return Err(format!(
                    "{tag}: valid has length {}, states has {}",
                    a.valid.len(),
                    a.states.len()
                ));
            }
            for (t, s) in a.states.iter().enumerate() {
                if !(s.x.is_finite() && s.y.is_finite() && s.heading.is_finite()) {
                    return Err(format!("{tag}: non-finite state at step {t}"));
                }
                if !(s.heading > -PI && s.heading <= PI) {
                    return Err(format!(
                        "{tag}: heading {} at step {t} outside (-pi, pi]",
                        s.heading
                    ));
                }
                if !s.velocity.is_finite() || s.velocity < 0.0 {
                    return Err(format!("{tag}: velocity {} at step {t}", s.velocity));
                }
            }
            if a.is_target && a.last_observed_step(self.config.history_steps).is_none() {
                return Err(format!("{tag}: target agent has no valid observed step"));
            }
        }
        for (i, p) in self.polygons.iter().enumerate() {
            let tag = format!("polygons[{i}] ({})", p.polygon_id);
            if p.points.len() < 2 {
                return Err(format!("{tag}: needs >= 2 points, got {}", p.points.len()));
            }
            for (j, pt) in p.points.iter().enumerate() {
                if !(pt.x.is_finite() && pt.y.is_finite() && pt.heading.is_finite()) {
                    return Err(format!("{tag}: non-finite point {j}"));
                }
                if !(pt.heading > -PI && pt.heading <= PI) {
                    return Err(format!("{tag}: point {j} heading outside (-pi, pi]"));
                }
            }
            // Headings must agree with consecutive-point tangents.
            for j in 0..p.points.len() - 1 {
                let dx = p.points[j + 1].x - p.points[j].x;
                let dy = p.points[j + 1].y - p.points[j].y;
                if dx.hypot(dy) == 0.0 {
                    return Err(format!("{tag}: zero-length segment at point {j}"));
                }
                let chord = dy.atan2(dx);
                if wrap_angle(p.points[j].heading - chord).abs() > TANGENT_TOL {
                    return Err(format!(
                        "{tag}: point {j} heading {} deviates from segment tangent {}",
                        p.points[j].heading, chord
                    ));
                }
            }
            let last = p.points.len() - 1;
            if wrap_angle(p.points[last].heading - p.points[last - 1].heading).abs() > TANGENT_TOL
            {
                return Err(format!("{tag}: last point heading must copy its predecessor"));
            }
        }
        let m = self.polygons.len();
        for (i, e) in self.adjacency.iter().enumerate() {
            if e.source >= m || e.target >= m {
                return Err(format!(
                    "adjacency[{i}]: index out of range (source {}, target {}, {m} polygons)",
                    e.source, e.target
                ));
            }
            if e.source == e.target {
                return Err(format!("adjacency[{i}]: self-edge on polygon {}", e.source));
            }
            if e.relation == PlRelation::BoundaryOf {
                if self.polygons[e.source].kind != PolygonKind::LaneBoundary {
                    return Err(format!(
                        "adjacency[{i}]: boundary_of source must be a lane_boundary"
                    ));
                }
                if self.polygons[e.target].kind != PolygonKind::LaneCenterline {
                    return Err(format!(
                        "adjacency[{i}]: boundary_of target must be a lane_centerline"
                    ));
                }
            }
        }
        // Every lane boundary must bound something once centerlines exist.
        let has_centerline = self
            .polygons
            .iter()
            .any(|p| p.kind == PolygonKind::LaneCenterline);
        if has_centerline {
            for (i, p) in self.polygons.iter().enumerate() {
                if p.kind == PolygonKind::LaneBoundary
                    && !self
                        .adjacency
                        .iter()
                        .any(|e| e.source == i && e.relation == PlRelation::BoundaryOf)
                {
                    return Err(format!(
                        "polygons[{i}] ({}): lane_boundary without a boundary_of edge",
                        p.polygon_id
                    ));
                }
            }
        }
        Ok(())
    }

    /// Indices of agents whose futures the model must predict.
    pub fn target_indices(&self) -> Vec<usize> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_target)
            .map(|(i, _)| i)
            .collect()
    }

    /// Apply a rigid motion to every pose in the scene.
    pub fn transformed(&self, g: &RigidTransform) -> Scene {
        let mut out = self.clone();
        for a in &mut out.agents {
            for s in &mut a.states {
                let p = g.apply(&Pose2::new(s.x, s.y, s.heading));
                s.x = p.x;
                s.y = p.y;
                s.heading = p.heading;
            }
        }
        for p in &mut out.polygons {
            for pt in &mut p.points {
                let q = g.apply(&Pose2::new(pt.x, pt.y, pt.heading));
                pt.x = q.x;
                pt.y = q.y;
                pt.heading = q.heading;
            }
        }
        out
    }
}

/// Width of the per-step numeric agent features.
pub const AGENT_FEATURE_DIM: usize = 6;

/// Per-step motion features for one agent over the observed history.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentFeatures {
    /// `[motion magnitude, local dx, local dy, cos dθ, sin dθ, velocity]`
    /// per observed step. Motion entries are zeroed where `motion_valid` is
    /// false; the heading-rate pair defaults to (1, 0) there.
    pub features: Vec<[f64; AGENT_FEATURE_DIM]>,
    /// Step observed at all.
    pub step_valid: Vec<bool>,
    /// Step has a valid predecessor, so its motion entries are meaningful.
    pub motion_valid: Vec<bool>,
}

/// Motion feature tensor over the observed history of one track.
///
/// All entries are invariant under rigid motions of the scene: displacement
/// is expressed in the agent's own heading frame and the heading enters as a
/// per-step rate rather than an absolute angle.
pub fn agent_feature_tensor(track: &AgentTrack, config: &ProblemConfig) -> AgentFeatures {
    let h = config.history_steps;
    let mut features = vec![[0.0; AGENT_FEATURE_DIM]; h];
    let mut step_valid = vec![false; h];
    let mut motion_valid = vec![false; h];
    for t in 0..h {
        if !track.valid[t] {
            continue;
        }
        step_valid[t] = true;
        let cur = &track.states[t];
        let has_motion = t > 0 && track.valid[t - 1];
        motion_valid[t] = has_motion;
        let (mag, local_dx, local_dy, dtheta) = if has_motion {
            let prev = &track.states[t - 1];
            let dx = cur.x - prev.x;
            let dy = cur.y - prev.y;
            let (s, c) = cur.heading.sin_cos();
            (
                dx.hypot(dy),
                c * dx + s * dy,
                -s * dx + c * dy,
                wrap_angle(cur.heading - prev.heading),
            )
        } else {
            (0.0, 0.0, 0.0, 0.0)
        };
        features[t] = [
            mag,
            local_dx,
            local_dy,
            dtheta.cos(),
            dtheta.sin(),
            cur.velocity,
        ];
    }
    AgentFeatures {
        features,
        step_valid,
        motion_valid,
    }
}
