//! A recorded computation graph over dense `f64` matrices with reverse-mode
//! differentiation.
//!
//! The op set is exactly what the model needs: affine maps, pointwise
//! nonlinearities, row/column broadcasts, gather/segment ops for edge
//! aggregation, per-segment softmax for attention, and a handful of angle
//! ops. Everything is deterministic: fixed summation order, no threading.
//!
//! A fresh [`Graph`] is built per forward pass; parameters enter as `param`
//! leaves and constants as `leaf`s. Gradients flow only through nodes that
//! (transitively) depend on a param leaf.

use ndarray::{s, Array2};
use std::f64::consts::{PI, TAU};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    /// `(n×m) op (1×m)`
    AddRow(Var, Var),
    MulRow(Var, Var),
    /// `(n×m) op (n×1)`
    AddCol(Var, Var),
    MulCol(Var, Var),
    ScalarMul(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Sin(Var),
    Cos(Var),
    /// `atan2(y, x)` elementwise.
    Atan2(Var, Var),
    /// Wrap into `(-π, π]`; gradient passes through unchanged.
    WrapAngle(Var),
    /// Row-wise standardization (no affine part).
    LayerNormRow(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// Row-major reinterpretation to a new shape of equal element count.
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    /// Rows summed into buckets by segment id.
    SegmentSum(Var, Vec<usize>),
    /// Softmax over rows sharing a segment id, per column.
    SegmentSoftmax(Var, Vec<usize>),
    /// Per-row dot products of head slices: `(n×d, n×d) -> (n×heads)`.
    HeadDot(Var, Var, usize),
    /// Scale head slices of `v (n×d)` by weights `(n×heads)`.
    ScaleHeads(Var, Var, usize),
    SumAll(Var),
    /// Row sums: `(n×m) -> (n×1)`.
    SumCols(Var),
    /// Prefix sums down rows within consecutive blocks of `block` rows.
    BlockCumsumRows(Var, usize),
    Detach,
    Transpose(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation, replayable in reverse for gradients.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`, zero-filled if `v` never
    /// influenced the loss.
    pub fn get(&self, g: &Graph, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(g.nodes[v.0].value.raw_dim()))
    }

    /// Whether any gradient reached `v`.
    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn wrap_scalar(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].value.nrows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].value.ncols()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar() on non-scalar node");
        val[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; gradients do not flow into it.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input; [`Graph::backward`] produces a gradient for it.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Param, true)
    }

    pub fn scalar_leaf(&mut self, x: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    pub fn zeros_leaf(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Array2::zeros((rows, cols)))
    }

    /// Replicate a 1×1 node down a column of `rows` entries.
    pub fn broadcast_scalar(&mut self, v: Var, rows: usize) -> Var {
        assert_eq!(self.value(v).dim(), (1, 1));
        let ones = self.leaf(Array2::ones((rows, 1)));
        self.matmul(ones, v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ac, br, "matmul: {ar}x{ac} . {br}x{bc}");
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, op: fn(Var, Var) -> Op, f: fn(f64, f64) -> f64) -> Var {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "elementwise op shape mismatch"
        );
        let mut value = self.value(a).clone();
        value.zip_mut_with(self.value(b), |x, &y| *x = f(*x, y));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, op(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, Op::Div, |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| -x);
        let ng = self.needs(a);
        self.push(value, Op::Neg(a), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, m) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, m), "add_row shape");
        let value = self.value(a) + self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, m) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, m), "mul_row shape");
        let value = self.value(a) * self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::MulRow(a, row), ng)
    }

    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (n, _) = self.value(a).dim();
        assert_eq!(self.value(col).dim(), (n, 1), "add_col shape");
        let value = self.value(a) + self.value(col);
        let ng = self.needs(a) || self.needs(col);
        self.push(value, Op::AddCol(a, col), ng)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (n, _) = self.value(a).dim();
        assert_eq!(self.value(col).dim(), (n, 1), "mul_col shape");
        let value = self.value(a) * self.value(col);
        let ng = self.needs(a) || self.needs(col);
        self.push(value, Op::MulCol(a, col), ng)
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x * c);
        let ng = self.needs(a);
        self.push(value, Op::ScalarMul(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x + c);
        let ng = self.needs(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, op: fn(Var) -> Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).mapv(&f);
        let ng = self.needs(a);
        self.push(value, op(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu, |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid, sigmoid_scalar)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus, softplus_scalar)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp, f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln, f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs, f64::abs)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sin, f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Op::Cos, f64::cos)
    }

    pub fn atan2(&mut self, y: Var, x: Var) -> Var {
        assert_eq!(self.value(y).dim(), self.value(x).dim());
        let mut value = self.value(y).clone();
        value.zip_mut_with(self.value(x), |yy, &xx| *yy = yy.atan2(xx));
        let ng = self.needs(y) || self.needs(x);
        self.push(value, Op::Atan2(y, x), ng)
    }

    pub fn wrap_angle(&mut self, a: Var) -> Var {
        self.unary(a, Op::WrapAngle, wrap_scalar)
    }

    /// Row-wise `(x - mean) / sqrt(var + eps)`; affine gain/bias live outside.
    pub fn layer_norm_row(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let m = row.mean().unwrap();
            let var = row.mapv(|v| (v - m) * (v - m)).mean().unwrap();
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - m) * inv);
        }
        let ng = self.needs(a);
        self.push(value, Op::LayerNormRow(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut value = Array2::zeros((n, total));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.nrows(), n, "concat_cols row mismatch");
            value.slice_mut(s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).ncols();
        let total: usize = parts.iter().map(|&p| self.value(p).nrows()).sum();
        let mut value = Array2::zeros((total, m));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.ncols(), m, "concat_rows column mismatch");
            value.slice_mut(s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Row-major reshape; element count must be preserved.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape element count mismatch");
        let flat: Vec<f64> = src.iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).unwrap();
        let ng = self.needs(a);
        self.push(value, Op::Reshape(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        assert!(start < end && end <= self.value(a).ncols());
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.needs(a);
        self.push(value, Op::SliceCols(a, start, end), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((idx.len(), src.ncols()));
        for (i, &j) in idx.iter().enumerate() {
            assert!(j < src.nrows(), "gather_rows index {j} out of range");
            value.row_mut(i).assign(&src.row(j));
        }
        let ng = self.needs(a);
        self.push(value, Op::GatherRows(a, idx.to_vec()), ng)
    }

    pub fn segment_sum(&mut self, a: Var, seg: &[usize], n_out: usize) -> Var {
        let src = self.value(a);
        assert_eq!(seg.len(), src.nrows(), "segment_sum length mismatch");
        let mut value = Array2::zeros((n_out, src.ncols()));
        for (i, &sid) in seg.iter().enumerate() {
            assert!(sid < n_out);
            let mut dst = value.row_mut(sid);
            dst += &src.row(i);
        }
        let ng = self.needs(a);
        self.push(value, Op::SegmentSum(a, seg.to_vec()), ng)
    }

    /// Per-column softmax over rows sharing a segment id. Rows belonging to a
    /// singleton segment come out as exactly 1.
    pub fn segment_softmax(&mut self, scores: Var, seg: &[usize], n_seg: usize) -> Var {
        let src = self.value(scores);
        assert_eq!(seg.len(), src.nrows());
        let cols = src.ncols();
        let mut maxes = Array2::from_elem((n_seg, cols), f64::NEG_INFINITY);
        for (i, &sid) in seg.iter().enumerate() {
            for c in 0..cols {
                if src[(i, c)] > maxes[(sid, c)] {
                    maxes[(sid, c)] = src[(i, c)];
                }
            }
        }
        let mut value = Array2::zeros(src.raw_dim());
        let mut sums = Array2::<f64>::zeros((n_seg, cols));
        for (i, &sid) in seg.iter().enumerate() {
            for c in 0..cols {
                let e = (src[(i, c)] - maxes[(sid, c)]).exp();
                value[(i, c)] = e;
                sums[(sid, c)] += e;
            }
        }
        for (i, &sid) in seg.iter().enumerate() {
            for c in 0..cols {
                value[(i, c)] /= sums[(sid, c)];
            }
        }
        let ng = self.needs(scores);
        self.push(value, Op::SegmentSoftmax(scores, seg.to_vec()), ng)
    }

    pub fn head_dot(&mut self, q: Var, k: Var, heads: usize) -> Var {
        let (n, d) = self.value(q).dim();
        assert_eq!(self.value(k).dim(), (n, d));
        assert!(d.is_multiple_of(heads), "embedding width not divisible by heads");
        let dh = d / heads;
        let qv = self.value(q);
        let kv = self.value(k);
        let mut value = Array2::zeros((n, heads));
        for i in 0..n {
            for h in 0..heads {
                let mut acc = 0.0;
                for c in h * dh..(h + 1) * dh {
                    acc += qv[(i, c)] * kv[(i, c)];
                }
                value[(i, h)] = acc;
            }
        }
        let ng = self.needs(q) || self.needs(k);
        self.push(value, Op::HeadDot(q, k, heads), ng)
    }

    pub fn scale_heads(&mut self, v: Var, w: Var, heads: usize) -> Var {
        let (n, d) = self.value(v).dim();
        assert_eq!(self.value(w).dim(), (n, heads));
        assert!(d.is_multiple_of(heads));
        let dh = d / heads;
        let vv = self.value(v);
        let wv = self.value(w);
        let mut value = Array2::zeros((n, d));
        for i in 0..n {
            for c in 0..d {
                value[(i, c)] = vv[(i, c)] * wv[(i, c / dh)];
            }
        }
        let ng = self.needs(v) || self.needs(w);
        self.push(value, Op::ScaleHeads(v, w, heads), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::SumAll(a), ng)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((src.nrows(), 1));
        for (i, row) in src.rows().into_iter().enumerate() {
            value[(i, 0)] = row.sum();
        }
        let ng = self.needs(a);
        self.push(value, Op::SumCols(a), ng)
    }

    pub fn block_cumsum_rows(&mut self, a: Var, block: usize) -> Var {
        let src = self.value(a);
        assert!(block > 0 && src.nrows().is_multiple_of(block), "block_cumsum_rows");
        let mut value = src.clone();
        for b in (0..src.nrows()).step_by(block) {
            for i in b + 1..b + block {
                let (prev, mut cur) = value.multi_slice_mut((s![i - 1, ..], s![i, ..]));
                cur += &prev;
            }
        }
        let ng = self.needs(a);
        self.push(value, Op::BlockCumsumRows(a, block), ng)
    }

    /// Identity on values; gradients stop here.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::Detach, false)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let ng = self.needs(a);
        self.push(value, Op::Transpose(a), ng)
    }

    /// Log-sum-exp across each row: `(n×m) -> (n×1)`, stable via a detached
    /// row-max shift.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let n = src.nrows();
        let mut maxes = Array2::zeros((n, 1));
        for i in 0..n {
            maxes[(i, 0)] = src.row(i).fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        }
        let m = self.leaf(maxes);
        let negm = self.neg(m);
        let shifted = self.add_col(a, negm);
        let e = self.exp(shifted);
        let sums = self.sum_cols(e);
        let lns = self.ln(sums);
        self.add(lns, m)
    }

    /// Reverse-mode sweep from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(
            self.value(loss).dim(),
            (1, 1),
            "backward from non-scalar loss"
        );
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Grads { grads }
    }

    fn backprop_node(&self, id: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let acc = |grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf | Op::Param | Op::Detach => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.nodes[a.0].needs_grad {
                    acc(grads, *a, g.dot(&bv.t()));
                }
                if self.nodes[b.0].needs_grad {
                    acc(grads, *b, av.t().dot(g));
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g * self.value(*b));
                acc(grads, *b, g * self.value(*a));
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(grads, *a, g / bv);
                let av = self.value(*a);
                acc(grads, *b, -(g * av) / (bv * bv));
            }
            Op::Neg(a) => acc(grads, *a, -g),
            Op::AddRow(a, row) => {
                acc(grads, *a, g.clone());
                let mut rg = Array2::zeros((1, g.ncols()));
                for r in g.rows() {
                    let mut dst = rg.row_mut(0);
                    dst += &r;
                }
                acc(grads, *row, rg);
            }
            Op::MulRow(a, row) => {
                acc(grads, *a, g * self.value(*row));
                let av = self.value(*a);
                let prod = g * av;
                let mut rg = Array2::zeros((1, g.ncols()));
                for r in prod.rows() {
                    let mut dst = rg.row_mut(0);
                    dst += &r;
                }
                acc(grads, *row, rg);
            }
            Op::AddCol(a, col) => {
                acc(grads, *a, g.clone());
                let mut cg = Array2::zeros((g.nrows(), 1));
                for (i, r) in g.rows().into_iter().enumerate() {
                    cg[(i, 0)] = r.sum();
                }
                acc(grads, *col, cg);
            }
            Op::MulCol(a, col) => {
                acc(grads, *a, g * self.value(*col));
                let prod = g * self.value(*a);
                let mut cg = Array2::zeros((g.nrows(), 1));
                for (i, r) in prod.rows().into_iter().enumerate() {
                    cg[(i, 0)] = r.sum();
                }
                acc(grads, *col, cg);
            }
            Op::ScalarMul(a, c) => acc(grads, *a, g.mapv(|x| x * c)),
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(grads, *a, g * &av.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                let out = &self.nodes[id].value;
                acc(grads, *a, g * &out.mapv(|y| y * (1.0 - y)));
            }
            Op::Softplus(a) => {
                let av = self.value(*a);
                acc(grads, *a, g * &av.mapv(sigmoid_scalar));
            }
            Op::Exp(a) => {
                let out = &self.nodes[id].value;
                acc(grads, *a, g * out);
            }
            Op::Ln(a) => {
                let av = self.value(*a);
                acc(grads, *a, g / av);
            }
            Op::Abs(a) => {
                let av = self.value(*a);
                acc(grads, *a, g * &av.mapv(|x| if x == 0.0 { 0.0 } else { x.signum() }));
            }
            Op::Sin(a) => {
                let av = self.value(*a);
                acc(grads, *a, g * &av.mapv(f64::cos));
            }
            Op::Cos(a) => {
                let av = self.value(*a);
                acc(grads, *a, -(g * &av.mapv(f64::sin)));
            }
            Op::Atan2(y, x) => {
                let yv = self.value(*y);
                let xv = self.value(*x);
                let mut dy = g.clone();
                let mut dx = g.clone();
                for i in 0..g.nrows() {
                    for j in 0..g.ncols() {
                        let denom = xv[(i, j)] * xv[(i, j)] + yv[(i, j)] * yv[(i, j)];
                        if denom == 0.0 {
                            dy[(i, j)] = 0.0;
                            dx[(i, j)] = 0.0;
                        } else {
                            dy[(i, j)] *= xv[(i, j)] / denom;
                            dx[(i, j)] *= -yv[(i, j)] / denom;
                        }
                    }
                }
                acc(grads, *y, dy);
                acc(grads, *x, dx);
            }
            Op::WrapAngle(a) => acc(grads, *a, g.clone()),
            Op::LayerNormRow(a) => {
                let x = self.value(*a);
                let m = x.ncols() as f64;
                let mut dx = Array2::zeros(x.raw_dim());
                for i in 0..x.nrows() {
                    let row = x.row(i);
                    let mean = row.mean().unwrap();
                    let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let grow = g.row(i);
                    let gsum: f64 = grow.sum();
                    let gdot: f64 = grow.iter().zip(&xhat).map(|(&gv, &xh)| gv * xh).sum();
                    for j in 0..x.ncols() {
                        dx[(i, j)] = inv * (grow[j] - gsum / m - xhat[j] * gdot / m);
                    }
                }
                acc(grads, *a, dx);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    acc(grads, p, g.slice(s![.., at..at + w]).to_owned());
                    at += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let n = self.value(p).nrows();
                    acc(grads, p, g.slice(s![at..at + n, ..]).to_owned());
                    at += n;
                }
            }
            Op::Reshape(a) => {
                let dim = self.value(*a).raw_dim();
                let flat: Vec<f64> = g.iter().copied().collect();
                acc(grads, *a, Array2::from_shape_vec(dim, flat).unwrap());
            }
            Op::SliceCols(a, start, end) => {
                let mut dx = Array2::zeros(self.value(*a).raw_dim());
                dx.slice_mut(s![.., *start..*end]).assign(g);
                acc(grads, *a, dx);
            }
            Op::GatherRows(a, idx) => {
                let mut dx = Array2::zeros(self.value(*a).raw_dim());
                for (i, &j) in idx.iter().enumerate() {
                    let mut dst = dx.row_mut(j);
                    dst += &g.row(i);
                }
                acc(grads, *a, dx);
            }
            Op::SegmentSum(a, seg) => {
                let mut dx = Array2::zeros(self.value(*a).raw_dim());
                for (i, &sid) in seg.iter().enumerate() {
                    dx.row_mut(i).assign(&g.row(sid));
                }
                acc(grads, *a, dx);
            }
            Op::SegmentSoftmax(scores, seg) => {
                let w = &self.nodes[id].value;
                let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let cols = w.ncols();
                let mut seg_dot = Array2::<f64>::zeros((n_seg, cols));
                for (i, &sid) in seg.iter().enumerate() {
                    for c in 0..cols {
                        seg_dot[(sid, c)] += g[(i, c)] * w[(i, c)];
                    }
                }
                let mut dx = Array2::zeros(w.raw_dim());
                for (i, &sid) in seg.iter().enumerate() {
                    for c in 0..cols {
                        dx[(i, c)] = w[(i, c)] * (g[(i, c)] - seg_dot[(sid, c)]);
                    }
                }
                acc(grads, *scores, dx);
            }
            Op::HeadDot(q, k, heads) => {
                let qv = self.value(*q);
                let kv = self.value(*k);
                let d = qv.ncols();
                let dh = d / heads;
                let mut dq = Array2::zeros(qv.raw_dim());
                let mut dk = Array2::zeros(kv.raw_dim());
                for i in 0..qv.nrows() {
                    for c in 0..d {
                        let gh = g[(i, c / dh)];
                        dq[(i, c)] = gh * kv[(i, c)];
                        dk[(i, c)] = gh * qv[(i, c)];
                    }
                }
                acc(grads, *q, dq);
                acc(grads, *k, dk);
            }
            Op::ScaleHeads(v, w, heads) => {
                let vv = self.value(*v);
                let wv = self.value(*w);
                let d = vv.ncols();
                let dh = d / heads;
                let mut dv = Array2::zeros(vv.raw_dim());
                let mut dw = Array2::zeros(wv.raw_dim());
                for i in 0..vv.nrows() {
                    for c in 0..d {
                        dv[(i, c)] = g[(i, c)] * wv[(i, c / dh)];
                        dw[(i, c / dh)] += g[(i, c)] * vv[(i, c)];
                    }
                }
                acc(grads, *v, dv);
                acc(grads, *w, dw);
            }
            Op::SumAll(a) => {
                let dx = Array2::from_elem(self.value(*a).raw_dim(), g[(0, 0)]);
                acc(grads, *a, dx);
            }
            Op::SumCols(a) => {
                let av = self.value(*a);
                let mut dx = Array2::zeros(av.raw_dim());
                for i in 0..av.nrows() {
                    let gi = g[(i, 0)];
                    dx.row_mut(i).fill(gi);
                }
                acc(grads, *a, dx);
            }
            Op::BlockCumsumRows(a, block) => {
                // d(out_i)/d(in_j) = 1 for j <= i within a block: suffix sums.
                let n = g.nrows();
                let mut dx = g.clone();
                for b in (0..n).step_by(*block) {
                    for i in (b..b + block - 1).rev() {
                        let (mut cur, next) = dx.multi_slice_mut((s![i, ..], s![i + 1, ..]));
                        cur += &next;
                    }
                }
                acc(grads, *a, dx);
            }
            Op::Transpose(a) => acc(grads, *a, g.t().to_owned()),
        }
    }
}

const LAYER_NORM_EPS: f64 = 1e-8;

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
