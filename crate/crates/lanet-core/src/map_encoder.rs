//! Vector-map encoding: raw point/polygon features through MLPs, then a
//! three-stage attention pipeline (point-to-point self-attention over a KNN
//! graph, polygon-from-point cross-attention over membership edges,
//! polygon-to-polygon self-attention over the typed adjacency) repeated for
//! a configured number of weight-shared rounds.
//!
//! Every network input is a relative quantity (segment lengths, turn angles,
//! relative poses), so the polygon embeddings are invariant under rigid
//! motions of the scene.

use crate::error::Result;
use crate::geometry::{knn_graph, rel_feature, wrap_angle, EdgeList, Pose2, REL_FEATURE_DIM};
use crate::nn::graph::Var;
use crate::nn::{AttentionDef, EmbeddingDef, MlpDef, ParamStore, Session};
use crate::scene::{LaneSemantic, PolygonKind, Scene};
use ndarray::Array2;

/// Numeric per-point features: previous/next segment length, turn angle to
/// the previous/next segment.
const PT_NUM_DIM: usize = 4;
/// Numeric per-polygon features: total arc length.
const PL_NUM_DIM: usize = 1;

/// The static structure of a scene's map graph: flattened points, ownership,
/// and the three typed edge sets with raw relative features.
#[derive(Debug, Clone)]
pub struct MapEdges {
    pub point_poses: Vec<Pose2>,
    /// Owning polygon index per point.
    pub point_owner: Vec<usize>,
    pub polygon_anchors: Vec<Pose2>,
    pub pt2pt: EdgeList,
    pub pl2pt: EdgeList,
    pub pl2pl: EdgeList,
    /// Relation index per pl2pl edge, aligned with `pl2pl`.
    pub pl2pl_relation: Vec<usize>,
}

/// Build the point/polygon edge structure of a scene.
///
/// The KNN graph runs over all map points regardless of kind; membership
/// edges connect each point to its owning polygon's anchor (first point);
/// polygon-to-polygon edges mirror the scene adjacency.
pub fn build_map_edges(scene: &Scene, k: usize) -> Result<MapEdges> {
    let mut point_poses = Vec::new();
    let mut point_owner = Vec::new();
    let mut polygon_anchors = Vec::with_capacity(scene.polygons.len());
    for (pi, poly) in scene.polygons.iter().enumerate() {
        polygon_anchors.push(poly.anchor_pose());
        for pt in &poly.points {
            point_poses.push(pt.pose());
            point_owner.push(pi);
        }
    }
    let pt2pt = if point_poses.len() >= 2 {
        knn_graph(&point_poses, k)?
    } else {
        EdgeList::new()
    };
    let mut pl2pt = EdgeList::with_capacity(point_poses.len());
    for (pt_idx, &owner) in point_owner.iter().enumerate() {
        pl2pt.push(
            pt_idx,
            owner,
            rel_feature(&point_poses[pt_idx], &polygon_anchors[owner], 0),
        );
    }
    let mut pl2pl = EdgeList::with_capacity(scene.adjacency.len());
    let mut pl2pl_relation = Vec::with_capacity(scene.adjacency.len());
    for e in &scene.adjacency {
        pl2pl.push(
            e.source,
            e.target,
            rel_feature(&polygon_anchors[e.source], &polygon_anchors[e.target], 0),
        );
        pl2pl_relation.push(e.relation.index());
    }
    Ok(MapEdges {
        point_poses,
        point_owner,
        polygon_anchors,
        pt2pt,
        pl2pt,
        pl2pl,
        pl2pl_relation,
    })
}

/// Rigid-invariant numeric features for every point of a scene's map.
fn point_numeric_features(scene: &Scene) -> Array2<f64> {
    let total: usize = scene.polygons.iter().map(|p| p.points.len()).sum();
    let mut out = Array2::zeros((total, PT_NUM_DIM));
    let mut row = 0;
    for poly in &scene.polygons {
        let pts = &poly.points;
        for i in 0..pts.len() {
            let prev_len = if i > 0 {
                (pts[i].x - pts[i - 1].x).hypot(pts[i].y - pts[i - 1].y)
            } else {
                0.0
            };
            let next_len = if i + 1 < pts.len() {
                (pts[i + 1].x - pts[i].x).hypot(pts[i + 1].y - pts[i].y)
            } else {
                0.0
            };
            let turn_prev = if i > 0 {
                wrap_angle(pts[i].heading - pts[i - 1].heading)
            } else {
                0.0
            };
            let turn_next = if i + 1 < pts.len() {
                wrap_angle(pts[i + 1].heading - pts[i].heading)
            } else {
                0.0
            };
            out[(row, 0)] = prev_len;
            out[(row, 1)] = next_len;
            out[(row, 2)] = turn_prev;
            out[(row, 3)] = turn_next;
            row += 1;
        }
    }
    out
}

/// Parameter group of the map encoder.
#[derive(Debug, Clone)]
pub struct MapEncoderDef {
    dim: usize,
    rounds: usize,
    knn_k: usize,
    kind_emb: EmbeddingDef,
    sem_emb: EmbeddingDef,
    rel_kind_emb: EmbeddingDef,
    pt_raw: MlpDef,
    pl_raw: MlpDef,
    r_pt2pt: MlpDef,
    r_pl2pt: MlpDef,
    r_pl2pl: MlpDef,
    att_pt2pt: AttentionDef,
    att_pl2pt: AttentionDef,
    att_pl2pl: AttentionDef,
}

impl MapEncoderDef {
    pub fn new(name: &str, dim: usize, heads: usize, rounds: usize, knn_k: usize) -> Self {
        let cat = (dim / 2).max(1);
        Self {
            dim,
            rounds,
            knn_k,
            kind_emb: EmbeddingDef::new(format!("{name}.kind_emb"), PolygonKind::COUNT, cat),
            sem_emb: EmbeddingDef::new(format!("{name}.sem_emb"), LaneSemantic::COUNT, cat),
            rel_kind_emb: EmbeddingDef::new(format!("{name}.rel_kind_emb"), 6, cat),
            pt_raw: MlpDef::new(format!("{name}.pt_raw"), &[PT_NUM_DIM + 2 * cat, dim, dim]),
            pl_raw: MlpDef::new(format!("{name}.pl_raw"), &[PL_NUM_DIM + 2 * cat, dim, dim]),
            r_pt2pt: MlpDef::new(format!("{name}.r_pt2pt"), &[REL_FEATURE_DIM, dim, dim]),
            r_pl2pt: MlpDef::new(format!("{name}.r_pl2pt"), &[REL_FEATURE_DIM, dim, dim]),
            r_pl2pl: MlpDef::new(format!("{name}.r_pl2pl"), &[REL_FEATURE_DIM + cat, dim, dim]),
            att_pt2pt: AttentionDef::new(format!("{name}.att_pt2pt"), dim, heads),
            att_pl2pt: AttentionDef::new(format!("{name}.att_pl2pt"), dim, heads),
            att_pl2pl: AttentionDef::new(format!("{name}.att_pl2pl"), dim, heads),
        }
    }

    pub fn knn_k(&self) -> usize {
        self.knn_k
    }

    pub fn register(&self, store: &mut ParamStore) {
        self.kind_emb.register(store);
        self.sem_emb.register(store);
        self.rel_kind_emb.register(store);
        self.pt_raw.register(store);
        self.pl_raw.register(store);
        self.r_pt2pt.register(store);
        self.r_pl2pt.register(store);
        self.r_pl2pl.register(store);
        self.att_pt2pt.register(store);
        self.att_pl2pt.register(store);
        self.att_pl2pl.register(store);
    }

    /// Initial embeddings from raw map data: per-point and per-polygon
    /// features through their MLPs.
    pub fn encode_raw(&self, sess: &mut Session, scene: &Scene) -> Result<(Var, Var)> {
        let kinds: Vec<usize> = scene.polygons.iter().map(|p| p.kind.index()).collect();
        let sems: Vec<usize> = scene.polygons.iter().map(|p| p.semantic.index()).collect();
        let pt_kinds: Vec<usize> = scene
            .polygons
            .iter()
            .flat_map(|p| p.points.iter().map(|_| p.kind.index()))
            .collect();
        let pt_sems: Vec<usize> = scene
            .polygons
            .iter()
            .flat_map(|p| p.points.iter().map(|_| p.semantic.index()))
            .collect();

        let pt_num = sess.g.leaf(point_numeric_features(scene));
        let pt_kind = self.kind_emb.lookup(sess, &pt_kinds)?;
        let pt_sem = self.sem_emb.lookup(sess, &pt_sems)?;
        let pt_in = sess.g.concat_cols(&[pt_num, pt_kind, pt_sem]);
        let x_pt = self.pt_raw.forward(sess, pt_in)?;

        let pl_num = sess.g.leaf(Array2::from_shape_fn(
            (scene.polygons.len(), PL_NUM_DIM),
            |(i, _)| scene.polygons[i].arc_length(),
        ));
        let pl_kind = self.kind_emb.lookup(sess, &kinds)?;
        let pl_sem = self.sem_emb.lookup(sess, &sems)?;
        let pl_in = sess.g.concat_cols(&[pl_num, pl_kind, pl_sem]);
        let x_pl = self.pl_raw.forward(sess, pl_in)?;
        Ok((x_pt, x_pl))
    }

    fn rel_matrix(edges: &EdgeList) -> Array2<f64> {
        let mut out = Array2::zeros((edges.len(), REL_FEATURE_DIM));
        for (i, r) in edges.rel.iter().enumerate() {
            let f = r.features();
            for (j, v) in f.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }

    /// Learned positional encoding of an edge list's relative features.
    fn encode_rel(&self, sess: &mut Session, mlp: &MlpDef, edges: &EdgeList) -> Result<Var> {
        let raw = sess.g.leaf(Self::rel_matrix(edges));
        mlp.forward(sess, raw)
    }

    /// Run the attention pipeline for `rounds` weight-shared rounds over
    /// prebuilt edges, returning `(x_pt, x_map)`.
    pub fn run(
        &self,
        sess: &mut Session,
        edges: &MapEdges,
        x_pt0: Var,
        x_pl0: Var,
        rounds: usize,
    ) -> Result<(Var, Var)> {
        let r_pt2pt = self.encode_rel(sess, &self.r_pt2pt, &edges.pt2pt)?;
        let r_pl2pt = self.encode_rel(sess, &self.r_pl2pt, &edges.pl2pt)?;
        let r_pl2pl = {
            let raw = sess.g.leaf(Self::rel_matrix(&edges.pl2pl));
            let rel_emb = self.rel_kind_emb.lookup(sess, &edges.pl2pl_relation)?;
            let joined = sess.g.concat_cols(&[raw, rel_emb]);
            self.r_pl2pl.forward(sess, joined)?
        };
        let mut x_pt = x_pt0;
        let mut x_pl = x_pl0;
        for _ in 0..rounds {
            x_pt = self
                .att_pt2pt
                .forward(sess, x_pt, x_pt, &edges.pt2pt, Some(r_pt2pt), None)?;
            x_pl = self
                .att_pl2pt
                .forward(sess, x_pl, x_pt, &edges.pl2pt, Some(r_pl2pt), None)?;
            x_pl = self
                .att_pl2pl
                .forward(sess, x_pl, x_pl, &edges.pl2pl, Some(r_pl2pl), None)?;
        }
        Ok((x_pt, x_pl))
    }

    /// Full map encoding of a scene: build edges, embed raw features, run the
    /// pipeline.
    pub fn forward(&self, sess: &mut Session, scene: &Scene) -> Result<MapEncoding> {
        let edges = build_map_edges(scene, self.knn_k)?;
        let (x_pt0, x_pl0) = self.encode_raw(sess, scene)?;
        let (x_pt, x_map) = self.run(sess, &edges, x_pt0, x_pl0, self.rounds)?;
        debug_assert_eq!(sess.g.cols(x_map), self.dim);
        Ok(MapEncoding { x_map, x_pt, edges })
    }
}

/// Output of the map encoder for one scene.
pub struct MapEncoding {
    /// Final polygon embeddings `(num_polygons × dim)`.
    pub x_map: Var,
    /// Final point embeddings.
    pub x_pt: Var,
    pub edges: MapEdges,
}
