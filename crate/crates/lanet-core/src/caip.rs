//! Context-aware interaction pruning: a learned scorer assigns each
//! candidate agent-map edge an importance score in (0, 1), a learnable
//! threshold hard-prunes the edge list, and survivors are soft-weighted by a
//! temperature-scaled sigmoid normalized per query.
//!
//! The hard mask uses a detached copy of the threshold; gradients reach θ and
//! τ only through the soft weighting path.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{EdgeList, RelFeature, REL_FEATURE_DIM};
use ndarray::Array2;
use crate::nn::graph::Var;
use crate::nn::{Init, MlpDef, ParamStore, Session};

/// Configuration for one pruning module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaipConfig {
    /// Scorer hidden width.
    pub hidden: usize,
    /// Initial threshold, in (0, 1); stored sigmoid-reparameterized.
    pub theta_init: f64,
    /// Initial temperature, > 0; stored as a log.
    pub tau_init: f64,
    /// Train the temperature alongside the threshold.
    pub learn_tau: bool,
    /// Weight survivors by `σ(-(S-θ)/τ)`, the inverted orientation that
    /// favors LOW scores. The default weights high scores more.
    pub eq8_as_printed: bool,
    /// Extra multiplier on the scorer's weight init, spreading initial
    /// scores across (0, 1) so threshold sweeps bite immediately.
    pub scorer_init_scale: f64,
}

impl Default for CaipConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            theta_init: 0.5,
            tau_init: 0.1,
            learn_tau: true,
            eq8_as_printed: false,
            scorer_init_scale: 6.0,
        }
    }
}

/// Parameter group of one pruning module.
#[derive(Debug, Clone)]
pub struct CaipDef {
    name: String,
    scorer: MlpDef,
    cfg: CaipConfig,
}

impl CaipDef {
    pub fn new(name: impl Into<String>, cfg: CaipConfig) -> Self {
        let name = name.into();
        let scorer = MlpDef::new(
            format!("{name}.scorer"),
            &[REL_FEATURE_DIM, cfg.hidden, 1],
        )
        .with_init_scale(cfg.scorer_init_scale);
        Self { name, scorer, cfg }
    }

    pub fn config(&self) -> &CaipConfig {
        &self.cfg
    }

    pub fn register(&self, store: &mut ParamStore) {
        self.scorer.register(store);
        // Pair hidden units antithetically: unit 2j+1 mirrors unit 2j with
        // negated weights on both sides, so the initial pre-sigmoid output
        // is an odd (linear) function of the features with no seed-level
        // offset. Without this, most seeds start with every candidate score
        // on one side of the threshold; the hard mask then keeps only
        // protected singletons, whose soft weights are exactly 1, and the
        // scorer, threshold, and temperature never receive a gradient.
        let w0_name = format!("{}.scorer.w0", self.name);
        let w1_name = format!("{}.scorer.w1", self.name);
        let mut w0 = store.value(&w0_name).clone();
        let mut w1 = store.value(&w1_name).clone();
        let hidden = w0.ncols();
        for j in (1..hidden).step_by(2) {
            for r in 0..w0.nrows() {
                w0[(r, j)] = -w0[(r, j - 1)];
            }
            for c in 0..w1.ncols() {
                w1[(j, c)] = -w1[(j - 1, c)];
            }
        }
        store.set(&w0_name, w0);
        store.set(&w1_name, w1);
        let theta_raw = inverse_sigmoid(self.cfg.theta_init);
        store.register(&format!("{}.theta_raw", self.name), 1, 1, Init::Value(theta_raw));
        store.register(
            &format!("{}.tau_log", self.name),
            1,
            1,
            Init::Value(self.cfg.tau_init.ln()),
        );
    }

    /// Importance scores in (0, 1), differentiable w.r.t. the scorer.
    ///
    /// `features` is one row of [`RelFeature::features`](crate::geometry::RelFeature::features)
    /// per candidate edge.
    pub fn score_edges(&self, sess: &mut Session, features: Var) -> Result<Var> {
        let raw = self.scorer.forward(sess, features)?;
        Ok(sess.g.sigmoid(raw))
    }

    /// The threshold as a graph node, θ = σ(θ_raw) ∈ (0, 1).
    pub fn theta(&self, sess: &mut Session) -> Var {
        let raw = sess.p(&format!("{}.theta_raw", self.name));
        sess.g.sigmoid(raw)
    }

    /// 1/τ as a graph node; a leaf when the temperature is fixed.
    pub fn inv_tau(&self, sess: &mut Session) -> Var {
        if self.cfg.learn_tau {
            let log_tau = sess.p(&format!("{}.tau_log", self.name));
            let neg = sess.g.neg(log_tau);
            sess.g.exp(neg)
        } else {
            let v = self.tau_value(sess_store(sess));
            sess.g.scalar_leaf(1.0 / v)
        }
    }

    /// Current threshold value (host side, for the hard mask).
    pub fn theta_value(&self, store: &ParamStore) -> f64 {
        sigmoid(store.value(&format!("{}.theta_raw", self.name))[(0, 0)])
    }

    /// Current temperature value.
    pub fn tau_value(&self, store: &ParamStore) -> f64 {
        store.value(&format!("{}.tau_log", self.name))[(0, 0)].exp()
    }

    /// Whether high scores receive high weight (+1) or the inverted
    /// orientation (-1) selected by `eq8_as_printed`.
    pub fn sign(&self) -> f64 {
        if self.cfg.eq8_as_printed {
            -1.0
        } else {
            1.0
        }
    }
}

fn sess_store<'a>(sess: &Session<'a>) -> &'a ParamStore {
    sess.store()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn inverse_sigmoid(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "threshold init must be in (0, 1)");
    (p / (1.0 - p)).ln()
}

/// Scorer input rows for candidate edges: the relative features with the
/// distance normalized by the search radius, so every input is O(1) and the
/// initial score distribution spreads across (0, 1).
pub fn edge_features(rels: &[RelFeature], distance_scale: f64) -> Array2<f64> {
    let mut out = Array2::zeros((rels.len(), REL_FEATURE_DIM));
    for (i, r) in rels.iter().enumerate() {
        let mut f = r.features();
        f[0] /= distance_scale.max(1e-9);
        for (j, v) in f.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    out
}

/// Binary keep mask: edge kept iff its score reaches the threshold.
pub fn hard_mask(scores: &[f64], theta: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= theta).collect()
}

/// Kept subset of an edge list after hard pruning.
#[derive(Debug, Clone)]
pub struct PrunedEdges {
    /// Edges that survived, in original order.
    pub kept: EdgeList,
    /// Index of each kept edge in the original list.
    pub kept_indices: Vec<usize>,
    /// Scores of the kept edges.
    pub kept_scores: Vec<f64>,
    /// Per-original-edge keep flag.
    pub valid_mask: Vec<bool>,
}

impl PrunedEdges {
    pub fn kept_fraction(&self) -> f64 {
        if self.valid_mask.is_empty() {
            1.0
        } else {
            self.kept.len() as f64 / self.valid_mask.len() as f64
        }
    }
}

/// Apply the hard threshold to a candidate edge list.
///
/// `query_of_edge` groups candidates by query; when `protect_starved` is set
/// and a query would lose every edge, its single highest-scoring edge (ties:
/// lowest index) is retained so downstream attention never starves.
pub fn prune_edges(
    edges: &EdgeList,
    scores: &[f64],
    theta: f64,
    query_of_edge: &[usize],
    protect_starved: bool,
) -> PrunedEdges {
    assert_eq!(edges.len(), scores.len());
    assert_eq!(edges.len(), query_of_edge.len());
    let mut mask = hard_mask(scores, theta);
    if protect_starved {
        let n_q = query_of_edge.iter().copied().max().map_or(0, |m| m + 1);
        let mut best: Vec<Option<usize>> = vec![None; n_q];
        let mut has_kept = vec![false; n_q];
        for i in 0..edges.len() {
            let q = query_of_edge[i];
            if mask[i] {
                has_kept[q] = true;
            }
            match best[q] {
                Some(b) if scores[i] <= scores[b] => {}
                _ => best[q] = Some(i),
            }
        }
        for q in 0..n_q {
            if !has_kept[q] {
                if let Some(b) = best[q] {
                    mask[b] = true;
                }
            }
        }
    }
    let kept = edges.filtered(&mask);
    let kept_indices: Vec<usize> = (0..edges.len()).filter(|&i| mask[i]).collect();
    let kept_scores: Vec<f64> = kept_indices.iter().map(|&i| scores[i]).collect();
    PrunedEdges {
        kept,
        kept_indices,
        kept_scores,
        valid_mask: mask,
    }
}

/// Temperature-scaled soft weighting of surviving edges.
///
/// Per query node, weight `w_j ∝ σ(sign · (S_j - θ) / τ)` normalized to sum
/// one; `values` rows are scaled by their weight. Computed in log space
/// (`log σ(z) = -softplus(-z)` fed through a per-segment softmax), which is
/// algebraically identical and keeps tiny temperatures finite.
///
/// Returns `(scaled values, normalized weights)`.
#[allow(clippy::too_many_arguments)]
pub fn soft_weight(
    sess: &mut Session,
    values: Var,
    scores: Var,
    theta: Var,
    inv_tau: Var,
    query_of_edge: &[usize],
    n_queries: usize,
    sign: f64,
) -> (Var, Var) {
    let weights = soft_weights(sess, scores, theta, inv_tau, query_of_edge, n_queries, sign);
    let scaled_values = sess.g.mul_col(values, weights);
    (scaled_values, weights)
}

/// The normalized weights of [`soft_weight`] alone, as an `(edges × 1)`
/// column suitable for gating attention values.
pub fn soft_weights(
    sess: &mut Session,
    scores: Var,
    theta: Var,
    inv_tau: Var,
    query_of_edge: &[usize],
    n_queries: usize,
    sign: f64,
) -> Var {
    let n_e = sess.g.rows(scores);
    assert_eq!(query_of_edge.len(), n_e);
    let theta_b = sess.g.broadcast_scalar(theta, n_e);
    let inv_tau_b = sess.g.broadcast_scalar(inv_tau, n_e);
    let dev = sess.g.sub(scores, theta_b);
    let scaled = sess.g.mul(dev, inv_tau_b);
    let z = sess.g.scalar_mul(scaled, sign);
    let neg_z = sess.g.neg(z);
    let sp = sess.g.softplus(neg_z);
    let log_sig = sess.g.neg(sp);
    sess.g.segment_softmax(log_sig, query_of_edge, n_queries)
}
