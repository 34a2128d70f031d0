//! Procedural synthetic scenes: straight or arc lane groups with shared
//! boundary lines, optional crosswalk and road edges, and agents that follow
//! lane centerlines with bounded noise.
//!
//! The generator is a pure function of `(seed, spec)` and every emitted scene
//! passes [`Scene::validate`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::scene::{
    AgentState, AgentTrack, AgentType, LaneSemantic, MapPolygon, PlEdge, PlRelation, PolyPoint,
    PolygonKind, ProblemConfig, Scene,
};

/// Generator parameters. Defaults produce a two-lane road with three agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub problem: ProblemConfig,
    /// Parallel lanes sharing one base curve.
    pub num_lanes: usize,
    pub lane_width: f64,
    /// Arc length of every lane, meters.
    pub lane_length: f64,
    /// Signed curvature is sampled uniformly from this range; 0 means straight.
    pub curvature_min: f64,
    pub curvature_max: f64,
    pub num_agents: usize,
    /// The first `num_targets` agents are prediction targets.
    pub num_targets: usize,
    /// Hard per-step speed cap, m/s.
    pub max_speed: f64,
    /// Lateral wander amplitude, meters.
    pub lateral_jitter: f64,
    /// Heading noise amplitude, radians.
    pub heading_noise: f64,
    /// Probability that a non-anchor history step is masked invalid.
    pub history_dropout: f64,
    /// Probability of emitting a perpendicular crosswalk.
    pub crosswalk_prob: f64,
    /// Emit road_edge polylines outside the outermost boundaries.
    pub road_edges: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::default(),
            num_lanes: 2,
            lane_width: 3.5,
            lane_length: 60.0,
            curvature_min: -0.015,
            curvature_max: 0.015,
            num_agents: 3,
            num_targets: 2,
            max_speed: 6.0,
            lateral_jitter: 0.15,
            heading_noise: 0.02,
            history_dropout: 0.1,
            crosswalk_prob: 0.5,
            road_edges: true,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.problem
            .validate()
            .map_err(Error::InvalidArgument)?;
        if self.num_lanes < 1 {
            return Err(Error::invalid("synth: num_lanes must be >= 1"));
        }
        if self.lane_width.is_nan() || self.lane_length.is_nan() || self.lane_width <= 0.0 || self.lane_length <= 0.0 {
            return Err(Error::invalid("synth: lane_width and lane_length must be > 0"));
        }
        if !(self.curvature_min.is_finite() && self.curvature_max.is_finite()) {
            return Err(Error::invalid("synth: curvature bounds must be finite"));
        }
        if self.curvature_min > self.curvature_max {
            return Err(Error::invalid("synth: curvature_min > curvature_max"));
        }
        // Offset curves must keep a positive radius out to the road edge.
        let half_width = (self.num_lanes as f64 / 2.0 + 1.0) * self.lane_width;
        let kmax = self.curvature_min.abs().max(self.curvature_max.abs());
        if kmax * half_width > 0.9 {
            return Err(Error::invalid(format!(
                "synth: curvature {kmax} too large for road half-width {half_width}"
            )));
        }
        if self.num_agents < 1 {
            return Err(Error::invalid("synth: num_agents must be >= 1"));
        }
        if self.num_targets < 1 || self.num_targets > self.num_agents {
            return Err(Error::invalid(
                "synth: num_targets must be in [1, num_agents]",
            ));
        }
        if self.max_speed.is_nan() || self.max_speed <= 0.0 {
            return Err(Error::invalid("synth: max_speed must be > 0"));
        }
        for (name, p) in [
            ("history_dropout", self.history_dropout),
            ("crosswalk_prob", self.crosswalk_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("synth: {name} must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Base curve: a line or circular arc parameterized by arc length.
struct BaseCurve {
    origin: (f64, f64),
    heading0: f64,
    curvature: f64,
}

impl BaseCurve {
    fn tangent(&self, s: f64) -> f64 {
        self.heading0 + self.curvature * s
    }

    /// Point at arc length `s`, offset `d` along the left normal.
    fn point(&self, s: f64, d: f64) -> (f64, f64) {
        let phi = self.tangent(s);
        let (n_x, n_y) = (-phi.sin(), phi.cos());
        if self.curvature.abs() < 1e-9 {
            let (ux, uy) = (self.heading0.cos(), self.heading0.sin());
            (
                self.origin.0 + s * ux + d * n_x,
                self.origin.1 + s * uy + d * n_y,
            )
        } else {
            let r = 1.0 / self.curvature;
            let (n0_x, n0_y) = (-self.heading0.sin(), self.heading0.cos());
            let cx = self.origin.0 + r * n0_x;
            let cy = self.origin.1 + r * n0_y;
            (cx - (r - d) * n_x, cy - (r - d) * n_y)
        }
    }
}

/// Sample a polyline at `count` evenly spaced arc parameters at offset `d`,
/// with headings set to consecutive-point chord directions.
fn sample_polyline(curve: &BaseCurve, length: f64, d: f64, count: usize) -> Vec<PolyPoint> {
    let mut pts: Vec<(f64, f64)> = (0..count)
        .map(|j| curve.point(length * j as f64 / (count - 1) as f64, d))
        .collect();
    // Crosswalks are sampled across the road instead of along it.
    polyline_from_positions(&mut pts)
}

fn polyline_from_positions(pts: &mut [(f64, f64)]) -> Vec<PolyPoint> {
    let n = pts.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let (from, to) = if j + 1 < n {
            (pts[j], pts[j + 1])
        } else {
            (pts[j - 1], pts[j])
        };
        out.push(PolyPoint {
            x: pts[j].0,
            y: pts[j].1,
            heading: (to.1 - from.1).atan2(to.0 - from.0),
        });
    }
    out
}

/// Deterministically synthesize a scene from `(seed, spec)`.
pub fn synthesize_scene(seed: u64, spec: &SynthSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let cfg = spec.problem;
    let h = cfg.history_steps;
    let total = cfg.total_steps();
    let dt = cfg.step_period;
    let f = cfg.points_per_polyline.max(2);
    let n_lanes = spec.num_lanes;
    let w = spec.lane_width;
    let length = spec.lane_length;

    let curve = BaseCurve {
        origin: (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)),
        heading0: rng.random_range(-PI..PI),
        curvature: if spec.curvature_min == spec.curvature_max {
            spec.curvature_min
        } else {
            rng.random_range(spec.curvature_min..spec.curvature_max)
        },
    };

    // Lane i center sits at offset (i - (n-1)/2) * w; boundary line j at (j - n/2) * w.
    let lane_offset = |i: usize| (i as f64 - (n_lanes as f64 - 1.0) / 2.0) * w;
    let boundary_offset = |j: usize| (j as f64 - n_lanes as f64 / 2.0) * w;

    let mut polygons = Vec::new();
    let mut adjacency = Vec::new();
    for i in 0..n_lanes {
        polygons.push(MapPolygon {
            polygon_id: format!("lane-{i}"),
            kind: PolygonKind::LaneCenterline,
            semantic: LaneSemantic::Normal,
            points: sample_polyline(&curve, length, lane_offset(i), f),
        });
    }
    let boundary_base = polygons.len();
    for j in 0..=n_lanes {
        polygons.push(MapPolygon {
            polygon_id: format!("boundary-{j}"),
            kind: PolygonKind::LaneBoundary,
            semantic: LaneSemantic::Unspecified,
            points: sample_polyline(&curve, length, boundary_offset(j), f),
        });
    }
    for i in 0..n_lanes {
        adjacency.push(PlEdge {
            source: boundary_base + i,
            target: i,
            relation: PlRelation::BoundaryOf,
        });
        adjacency.push(PlEdge {
            source: boundary_base + i + 1,
            target: i,
            relation: PlRelation::BoundaryOf,
        });
        if i + 1 < n_lanes {
            adjacency.push(PlEdge {
                source: i + 1,
                target: i,
                relation: PlRelation::LeftNeighbor,
            });
            adjacency.push(PlEdge {
                source: i,
                target: i + 1,
                relation: PlRelation::RightNeighbor,
            });
        }
    }
    if spec.road_edges {
        let margin = 0.25 * w;
        for (side, off) in [
            ("right", boundary_offset(0) - margin),
            ("left", boundary_offset(n_lanes) + margin),
        ] {
            polygons.push(MapPolygon {
                polygon_id: format!("road-edge-{side}"),
                kind: PolygonKind::RoadEdge,
                semantic: LaneSemantic::Unspecified,
                points: sample_polyline(&curve, length, off, f),
            });
        }
    }
    if rng.random_bool(spec.crosswalk_prob) {
        let s_c = rng.random_range(0.35..0.65) * length;
        let lo = boundary_offset(0) - 0.2;
        let hi = boundary_offset(n_lanes) + 0.2;
        let mut pts: Vec<(f64, f64)> = (0..4)
            .map(|k| curve.point(s_c, lo + (hi - lo) * k as f64 / 3.0))
            .collect();
        let cw_idx = polygons.len();
        polygons.push(MapPolygon {
            polygon_id: "crosswalk-0".into(),
            kind: PolygonKind::Crosswalk,
            semantic: LaneSemantic::Pedestrian,
            points: polyline_from_positions(&mut pts),
        });
        for i in 0..n_lanes {
            adjacency.push(PlEdge {
                source: cw_idx,
                target: i,
                relation: PlRelation::Crossing,
            });
            adjacency.push(PlEdge {
                source: i,
                target: cw_idx,
                relation: PlRelation::Crossing,
            });
        }
    }

    let mut agents = Vec::with_capacity(spec.num_agents);
    for a in 0..spec.num_agents {
        let lane = rng.random_range(0..n_lanes);
        let agent_type = sample_agent_type(&mut rng);
        let type_speed = match agent_type {
            AgentType::Pedestrian => 0.2,
            AgentType::Cyclist => 0.5,
            AgentType::Bus => 0.85,
            AgentType::Motorcyclist => 1.0,
            AgentType::Other => 0.8,
            AgentType::Vehicle => 1.0,
        };
        let s0 = rng.random_range(0.05..0.35) * length;
        // Keep the whole track on the lane.
        let vmax_eff = spec
            .max_speed
            .min((0.95 * length - s0) / (total as f64 * dt))
            .max(0.1);
        let base_speed = rng.random_range(0.3..0.9) * vmax_eff * type_speed;
        let mut lateral = rng.random_range(-0.25..0.25) * w;
        let mut speed = base_speed;
        let mut s = s0;

        let mut positions = Vec::with_capacity(total);
        let mut headings = Vec::with_capacity(total);
        for _ in 0..total {
            positions.push(curve.point(s, lane_offset(lane) + lateral));
            headings.push(wrap_angle(
                curve.tangent(s) + rng.random_range(-1.0..1.0) * spec.heading_noise,
            ));
            speed = (speed + rng.random_range(-1.0..1.0) * 0.05 * base_speed)
                .clamp(0.0, vmax_eff);
            lateral = (lateral + rng.random_range(-1.0..1.0) * spec.lateral_jitter * dt)
                .clamp(-0.35 * w, 0.35 * w);
            s += speed * dt;
        }
        // Enforce the per-step displacement cap so futures stay kinematically
        // reachable from the last observed position.
        let cap = spec.max_speed * dt;
        for i in 1..total {
            let dx = positions[i].0 - positions[i - 1].0;
            let dy = positions[i].1 - positions[i - 1].1;
            let d = dx.hypot(dy);
            if d > cap {
                let scale = cap / d;
                positions[i] = (
                    positions[i - 1].0 + dx * scale,
                    positions[i - 1].1 + dy * scale,
                );
            }
        }

        let mut states = Vec::with_capacity(total);
        for i in 0..total {
            let v = if i == 0 {
                let dx = positions[1].0 - positions[0].0;
                let dy = positions[1].1 - positions[0].1;
                dx.hypot(dy) / dt
            } else {
                let dx = positions[i].0 - positions[i - 1].0;
                let dy = positions[i].1 - positions[i - 1].1;
                dx.hypot(dy) / dt
            };
            states.push(AgentState {
                x: positions[i].0,
                y: positions[i].1,
                heading: headings[i],
                velocity: v,
            });
        }
        let mut valid = vec![true; total];
        for flag in valid.iter_mut().take(h - 1) {
            if rng.random_bool(spec.history_dropout) {
                *flag = false;
            }
        }
        // The most recent observed step anchors prediction; keep it valid.
        valid[h - 1] = true;

        agents.push(AgentTrack {
            agent_id: format!("agent-{a}"),
            agent_type,
            states,
            valid,
            is_target: a < spec.num_targets,
        });
    }

    let scene = Scene {
        scenario_id: format!("synth-{seed:016x}"),
        config: cfg,
        agents,
        polygons,
        adjacency,
    };
    debug_assert_eq!(scene.validate(), Ok(()));
    Ok(scene)
}

fn sample_agent_type(rng: &mut impl Rng) -> AgentType {
    let u: f64 = rng.random();
    if u < 0.70 {
        AgentType::Vehicle
    } else if u < 0.80 {
        AgentType::Cyclist
    } else if u < 0.88 {
        AgentType::Bus
    } else if u < 0.93 {
        AgentType::Motorcyclist
    } else if u < 0.97 {
        AgentType::Pedestrian
    } else {
        AgentType::Other
    }
}
