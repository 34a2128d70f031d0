//! Layer definitions: MLPs, embedding tables, and multi-head edge attention
//! with additive relative positional encodings.
//!
//! A `*Def` names a parameter group; `register` creates the parameters and
//! `forward` binds them into a session's graph. The same definition must be
//! used for both so names line up.

use crate::error::{Error, Result};
use crate::geometry::EdgeList;
use crate::nn::graph::Var;
use crate::nn::{Init, ParamStore, Session};

/// Fully connected layers with rectifier activations between them and an
/// affine final layer (unless `final_relu` is set).
#[derive(Debug, Clone)]
pub struct MlpDef {
    name: String,
    widths: Vec<usize>,
    final_relu: bool,
    final_bias: bool,
    init_scale: f64,
}

impl MlpDef {
    pub fn new(name: impl Into<String>, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "MLP needs at least input and output widths");
        Self {
            name: name.into(),
            widths: widths.to_vec(),
            final_relu: false,
            final_bias: true,
            init_scale: 1.0,
        }
    }

    pub fn with_final_relu(mut self) -> Self {
        self.final_relu = true;
        self
    }

    /// Multiply the fan-in weight init limit.
    pub fn with_init_scale(mut self, scale: f64) -> Self {
        self.init_scale = scale;
        self
    }

    /// Drop the last layer's bias. Useful for heads feeding a softmax,
    /// where a shared offset is a redundant degree of freedom that could
    /// never receive gradient.
    pub fn without_final_bias(mut self) -> Self {
        self.final_bias = false;
        self
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn register(&self, store: &mut ParamStore) {
        let layers = self.widths.len() - 1;
        for i in 0..layers {
            store.register(
                &format!("{}.w{i}", self.name),
                self.widths[i],
                self.widths[i + 1],
                Init::UniformFanIn {
                    scale: self.init_scale,
                },
            );
            if self.final_bias || i + 1 < layers {
                store.register(
                    &format!("{}.b{i}", self.name),
                    1,
                    self.widths[i + 1],
                    Init::Zeros,
                );
            }
        }
    }

    pub fn forward(&self, sess: &mut Session, input: Var) -> Result<Var> {
        if sess.g.cols(input) != self.widths[0] {
            return Err(Error::invalid(format!(
                "{}: input width {} does not match spec width {}",
                self.name,
                sess.g.cols(input),
                self.widths[0]
            )));
        }
        let layers = self.widths.len() - 1;
        let mut x = input;
        for i in 0..layers {
            let w = sess.p(&format!("{}.w{i}", self.name));
            x = sess.g.matmul(x, w);
            if self.final_bias || i + 1 < layers {
                let b = sess.p(&format!("{}.b{i}", self.name));
                x = sess.g.add_row(x, b);
            }
            if i + 1 < layers || self.final_relu {
                x = sess.g.relu(x);
            }
        }
        Ok(x)
    }
}

/// A learned lookup table over a categorical input.
#[derive(Debug, Clone)]
pub struct EmbeddingDef {
    name: String,
    rows: usize,
    dim: usize,
}

impl EmbeddingDef {
    pub fn new(name: impl Into<String>, rows: usize, dim: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn register(&self, store: &mut ParamStore) {
        store.register(
            &format!("{}.table", self.name),
            self.rows,
            self.dim,
            Init::Uniform {
                limit: 1.0 / (self.dim as f64).sqrt(),
            },
        );
    }

    /// Row lookup; differentiable with respect to the table only.
    pub fn lookup(&self, sess: &mut Session, indices: &[usize]) -> Result<Var> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.rows) {
            return Err(Error::invalid(format!(
                "{}: index {bad} out of range for table of {} rows",
                self.name, self.rows
            )));
        }
        let table = sess.p(&format!("{}.table", self.name));
        Ok(sess.g.gather_rows(table, indices))
    }
}

/// Multi-head scaled dot-product attention over an explicit edge list, with
/// the per-edge relative encoding added to both key and value after learned
/// projections. The residual trunk is `x + W_o(agg) + b_o`; layer norm and the
/// feed-forward block sit on a second residual branch, so a query with no
/// incoming edges is still transformed by the residual path.
#[derive(Debug, Clone)]
pub struct AttentionDef {
    name: String,
    dim: usize,
    heads: usize,
    rel_encoding: bool,
}

impl AttentionDef {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize) -> Self {
        assert!(dim.is_multiple_of(heads), "embedding width must be divisible by heads");
        Self {
            name: name.into(),
            dim,
            heads,
            rel_encoding: true,
        }
    }

    /// Drop the relative-encoding projections; for attention over edges
    /// that carry no positional information (such as cross-mode edges).
    pub fn without_rel_encoding(mut self) -> Self {
        self.rel_encoding = false;
        self
    }

    pub fn register(&self, store: &mut ParamStore) {
        let d = self.dim;
        for proj in ["q", "k", "v", "out"] {
            store.register(
                &format!("{}.{proj}.w", self.name),
                d,
                d,
                Init::UniformFanIn { scale: 1.0 },
            );
            store.register(&format!("{}.{proj}.b", self.name), 1, d, Init::Zeros);
        }
        if self.rel_encoding {
            for proj in ["kr", "vr"] {
                store.register(
                    &format!("{}.{proj}.w", self.name),
                    d,
                    d,
                    Init::UniformFanIn { scale: 1.0 },
                );
            }
        }
        store.register(&format!("{}.ln.gain", self.name), 1, d, Init::Value(1.0));
        store.register(&format!("{}.ln.bias", self.name), 1, d, Init::Zeros);
        store.register(
            &format!("{}.ffn.w0", self.name),
            d,
            2 * d,
            Init::UniformFanIn { scale: 1.0 },
        );
        store.register(&format!("{}.ffn.b0", self.name), 1, 2 * d, Init::Zeros);
        store.register(
            &format!("{}.ffn.w1", self.name),
            2 * d,
            d,
            Init::UniformFanIn { scale: 1.0 },
        );
        store.register(&format!("{}.ffn.b1", self.name), 1, d, Init::Zeros);
    }

    fn affine(&self, sess: &mut Session, x: Var, proj: &str) -> Var {
        let w = sess.p(&format!("{}.{proj}.w", self.name));
        let b = sess.p(&format!("{}.{proj}.b", self.name));
        let m = sess.g.matmul(x, w);
        sess.g.add_row(m, b)
    }

    /// Attention update for the query nodes.
    ///
    /// `r_emb` must be an `(edges × dim)` encoding aligned with `edges`
    /// (`None` only for definitions built `without_rel_encoding`);
    /// `value_gate`, when present, scales each edge's value vector (the
    /// pruning module's soft weights enter here).
    pub fn forward(
        &self,
        sess: &mut Session,
        x_q: Var,
        x_kv: Var,
        edges: &EdgeList,
        r_emb: Option<Var>,
        value_gate: Option<Var>,
    ) -> Result<Var> {
        let (out, _) = self.forward_with_weights(sess, x_q, x_kv, edges, r_emb, value_gate)?;
        Ok(out)
    }

    /// Like [`AttentionDef::forward`] but also returns the per-edge attention
    /// weights `(edges × heads)` when the edge list is nonempty.
    pub fn forward_with_weights(
        &self,
        sess: &mut Session,
        x_q: Var,
        x_kv: Var,
        edges: &EdgeList,
        r_emb: Option<Var>,
        value_gate: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        let n_q = sess.g.rows(x_q);
        let n_kv = sess.g.rows(x_kv);
        if sess.g.cols(x_q) != self.dim || sess.g.cols(x_kv) != self.dim {
            return Err(Error::invalid(format!(
                "{}: node embedding width must be {}",
                self.name, self.dim
            )));
        }
        let n_e = edges.len();
        if self.rel_encoding != r_emb.is_some() {
            return Err(Error::invalid(format!(
                "{}: relative encodings {} by this definition",
                self.name,
                if self.rel_encoding { "required" } else { "not accepted" }
            )));
        }
        if let Some(r) = r_emb {
            if sess.g.rows(r) != n_e || (n_e > 0 && sess.g.cols(r) != self.dim) {
                return Err(Error::invalid(format!(
                    "{}: {} relative encodings for {} edges",
                    self.name,
                    sess.g.rows(r),
                    n_e
                )));
            }
        }
        if let Some(gate) = value_gate {
            if sess.g.rows(gate) != n_e {
                return Err(Error::invalid(format!(
                    "{}: value gate has {} rows for {} edges",
                    self.name,
                    sess.g.rows(gate),
                    n_e
                )));
            }
        }
        if edges.sources.iter().any(|&s| s >= n_kv) || edges.targets.iter().any(|&t| t >= n_q) {
            return Err(Error::invalid(format!("{}: edge index out of range", self.name)));
        }

        let (agg, weights) = if n_e == 0 {
            (sess.g.zeros_leaf(n_q, self.dim), None)
        } else {
            let q_nodes = self.affine(sess, x_q, "q");
            let q_edges = sess.g.gather_rows(q_nodes, &edges.targets);
            let src = sess.g.gather_rows(x_kv, &edges.sources);
            let mut k_edges = self.affine(sess, src, "k");
            let mut v_edges = self.affine(sess, src, "v");
            if let Some(r) = r_emb {
                let kr_w = sess.p(&format!("{}.kr.w", self.name));
                let kr = sess.g.matmul(r, kr_w);
                k_edges = sess.g.add(k_edges, kr);
                let vr_w = sess.p(&format!("{}.vr.w", self.name));
                let vr = sess.g.matmul(r, vr_w);
                v_edges = sess.g.add(v_edges, vr);
            }
            if let Some(gate) = value_gate {
                v_edges = sess.g.mul_col(v_edges, gate);
            }
            let dh = self.dim / self.heads;
            let dots = sess.g.head_dot(q_edges, k_edges, self.heads);
            let scores = sess.g.scalar_mul(dots, 1.0 / (dh as f64).sqrt());
            let weights = sess.g.segment_softmax(scores, &edges.targets, n_q);
            let weighted = sess.g.scale_heads(v_edges, weights, self.heads);
            (
                sess.g.segment_sum(weighted, &edges.targets, n_q),
                Some(weights),
            )
        };

        let attn = self.affine(sess, agg, "out");
        let trunk = sess.g.add(x_q, attn);

        let gain = sess.p(&format!("{}.ln.gain", self.name));
        let bias = sess.p(&format!("{}.ln.bias", self.name));
        let normed = sess.g.layer_norm_row(trunk);
        let normed = sess.g.mul_row(normed, gain);
        let normed = sess.g.add_row(normed, bias);
        let w0 = sess.p(&format!("{}.ffn.w0", self.name));
        let b0 = sess.p(&format!("{}.ffn.b0", self.name));
        let w1 = sess.p(&format!("{}.ffn.w1", self.name));
        let b1 = sess.p(&format!("{}.ffn.b1", self.name));
        let h = sess.g.matmul(normed, w0);
        let h = sess.g.add_row(h, b0);
        let h = sess.g.relu(h);
        let h = sess.g.matmul(h, w1);
        let ffn = sess.g.add_row(h, b1);
        Ok((sess.g.add(trunk, ffn), weights))
    }
}
