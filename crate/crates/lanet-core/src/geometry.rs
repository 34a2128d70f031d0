//! Planar poses, angle arithmetic, rigid transforms, and the spatial graph
//! constructors (KNN and radius search) consumed by the encoders.
//!
//! Everything here is brute force by intent: desk-scale node counts make
//! O(n²) searches cheap, and the deterministic tie-breaking (lower index
//! wins) keeps graph construction reproducible.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`.
///
/// Panics on non-finite input; angles reaching this function are expected to
/// have been validated at the ingestion boundary.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    assert!(a.is_finite(), "wrap_angle: non-finite angle {a}");
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// A planar pose: position in meters, heading in radians wrapped to `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    /// Wrapped at construction; use [`Pose2::new`] to keep the invariant.
    pub heading: f64,
}

impl Pose2 {
    /// Create a pose with the heading wrapped into `(-π, π]`.
    #[inline]
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        assert!(
            x.is_finite() && y.is_finite(),
            "Pose2: non-finite position ({x}, {y})"
        );
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    /// Euclidean distance to another pose's position.
    #[inline]
    pub fn distance(&self, other: &Pose2) -> f64 {
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// A proper rigid motion of the plane: rotation by `angle` about the origin
/// followed by a translation.
#[derive(Debug, Clone, Copy)]
pub struct RigidTransform {
    pub angle: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidTransform {
    pub fn new(angle: f64, tx: f64, ty: f64) -> Self {
        Self { angle, tx, ty }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Apply to a pose: position rotates and translates, heading shifts by the
    /// rotation angle.
    pub fn apply(&self, p: &Pose2) -> Pose2 {
        let (s, c) = self.angle.sin_cos();
        Pose2::new(
            c * p.x - s * p.y + self.tx,
            s * p.x + c * p.y + self.ty,
            p.heading + self.angle,
        )
    }

    /// Apply to a bare point.
    pub fn apply_xy(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }
}

/// Relative pose features between two graph nodes: the raw input from which
/// every learned positional encoding is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelFeature {
    /// Euclidean distance between the endpoints, meters, >= 0.
    pub distance: f64,
    /// Heading of the target minus heading of the source, wrapped.
    pub orientation_diff: f64,
    /// Direction to the target expressed in the source frame, wrapped.
    pub bearing: f64,
    /// Timestep gap; zero for purely spatial edges.
    pub time_gap: usize,
}

impl RelFeature {
    /// The all-zero feature shared by coincident, aligned endpoints.
    pub fn zero() -> Self {
        Self {
            distance: 0.0,
            orientation_diff: 0.0,
            bearing: 0.0,
            time_gap: 0,
        }
    }

    /// Numeric vector fed to the encoding MLPs. Angles enter as sin/cos pairs
    /// so the inputs stay continuous across the wrap boundary.
    pub fn features(&self) -> [f64; REL_FEATURE_DIM] {
        [
            self.distance,
            self.orientation_diff.sin(),
            self.orientation_diff.cos(),
            self.bearing.sin(),
            self.bearing.cos(),
            self.time_gap as f64,
        ]
    }
}

/// Width of [`RelFeature::features`].
pub const REL_FEATURE_DIM: usize = 6;

/// Relative features of `dst` seen from `src` with timestep gap `dt`.
///
/// The bearing is the direction of the displacement vector expressed in the
/// source frame; coincident endpoints get bearing 0.
pub fn rel_feature(src: &Pose2, dst: &Pose2, dt: usize) -> RelFeature {
    let dx = dst.x - src.x;
    let dy = dst.y - src.y;
    let distance = (dx * dx + dy * dy).sqrt();
    let bearing = if distance == 0.0 {
        0.0
    } else {
        wrap_angle(dy.atan2(dx) - src.heading)
    };
    RelFeature {
        distance,
        orientation_diff: wrap_angle(dst.heading - src.heading),
        bearing,
        time_gap: dt,
    }
}

/// A directed edge list with per-edge relative features, aligned by index.
///
/// Sources and targets index into caller-defined node sets (which may differ,
/// as in polygon-to-agent edges).
#[derive(Debug, Clone, Default)]
pub struct EdgeList {
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub rel: Vec<RelFeature>,
}

impl EdgeList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            sources: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
            rel: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, source: usize, target: usize, rel: RelFeature) {
        self.sources.push(source);
        self.targets.push(target);
        self.rel.push(rel);
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Keep only the edges whose positions are flagged true in `mask`.
    pub fn filtered(&self, mask: &[bool]) -> EdgeList {
        assert_eq!(mask.len(), self.len());
        let mut out = EdgeList::with_capacity(mask.iter().filter(|m| **m).count());
        for (i, &keep) in mask.iter().enumerate() {
            if keep {
                out.push(self.sources[i], self.targets[i], self.rel[i]);
            }
        }
        out
    }
}

/// Distances are compared on a 1 µm grid when ranking KNN candidates, so
/// exact geometric ties (and their index tie-break) survive the last-ULP
/// perturbations a rigid transform introduces.
pub const KNN_DISTANCE_QUANTUM: f64 = 1e-6;

#[inline]
fn quantize_distance(d: f64) -> i64 {
    (d / KNN_DISTANCE_QUANTUM).round() as i64
}

/// Directed KNN graph: each node gathers from its `min(k, n-1)` nearest
/// neighbors by Euclidean distance (quantized per [`KNN_DISTANCE_QUANTUM`]),
/// ties broken by lower node index.
///
/// Edges run neighbor -> gatherer, so every node has exactly `min(k, n-1)`
/// incoming edges. No self-loops.
pub fn knn_graph(points: &[Pose2], k: usize) -> Result<EdgeList> {
    if k < 1 {
        return Err(Error::invalid(format!("knn_graph: k must be >= 1, got {k}")));
    }
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "knn_graph: need at least 2 points, got {n}"
        )));
    }
    let take = k.min(n - 1);
    let mut edges = EdgeList::with_capacity(n * take);
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for target in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != target));
        order.sort_by_key(|&a| (quantize_distance(points[a].distance(&points[target])), a));
        for &src in order.iter().take(take) {
            edges.push(src, target, rel_feature(&points[src], &points[target], 0));
        }
    }
    Ok(edges)
}

/// Bipartite radius graph: edge (s, t) present iff the endpoints are within
/// `radius` of each other and both are valid under their masks.
///
/// Edges are emitted in (target, source) index order. When sources and
/// targets alias the same node set the caller is responsible for dropping
/// self-pairs.
pub fn radius_graph(
    sources: &[Pose2],
    targets: &[Pose2],
    radius: f64,
    src_valid: &[bool],
    tgt_valid: &[bool],
) -> Result<EdgeList> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::invalid(format!(
            "radius_graph: radius must be > 0, got {radius}"
        )));
    }
    assert_eq!(sources.len(), src_valid.len());
    assert_eq!(targets.len(), tgt_valid.len());
    let mut edges = EdgeList::new();
    for (t, tp) in targets.iter().enumerate() {
        if !tgt_valid[t] {
            continue;
        }
        for (s, sp) in sources.iter().enumerate() {
            if !src_valid[s] {
                continue;
            }
            if sp.distance(tp) <= radius {
                edges.push(s, t, rel_feature(sp, tp, 0));
            }
        }
    }
    Ok(edges)
}
