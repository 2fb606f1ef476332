//! Eager reverse-mode tape.
//!
//! Every operation evaluates immediately and appends one arena entry holding
//! the result, a zeroed gradient buffer, and the saved state its backward
//! rule needs. [`Tape::backward`] runs a single reverse sweep from a scalar
//! loss; gradients accumulate additively, so a node feeding several
//! consumers is handled without special cases. A second backward call on the
//! same tape is an error until [`Tape::zero_grads`] resets it.

use super::{Matrix, NumKitError};
use crate::scalar::Scalar;
use std::cell::RefCell;

/// Handle to a tape entry. Plain index, cheap to copy; only valid on the
/// tape that produced it (indexing with a foreign node panics or returns
/// unrelated data, as with any arena).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    id: usize,
}

/// Element-wise nonlinearity applied by the fused graph-attention head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

/// Per-edge attention scores of one fused head, for inspection and export.
/// `entries[i]` lists `(neighbor, raw_score, normalized_weight)` in the same
/// sorted order as the neighborhood passed in; `raw_score` is the value
/// after the leaky rectifier, before normalization.
#[derive(Debug, Clone)]
pub struct GatHeadCoeffs<S> {
    pub entries: Vec<Vec<(usize, S, S)>>,
}

const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_CUBIC: f64 = 0.044_715;
const BCE_CLAMP: f64 = 1e-7;

fn gelu_value<S: Scalar>(x: S) -> S {
    let k = S::lit(GELU_SCALE);
    let c = S::lit(GELU_CUBIC);
    let half = S::lit(0.5);
    let u = k * (x + c * x * x * x);
    half * x * (S::one() + u.tanh())
}

fn gelu_deriv<S: Scalar>(x: S) -> S {
    let k = S::lit(GELU_SCALE);
    let c = S::lit(GELU_CUBIC);
    let half = S::lit(0.5);
    let three = S::lit(3.0);
    let u = k * (x + c * x * x * x);
    let t = u.tanh();
    let du = k * (S::one() + three * c * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}

fn sigmoid_value<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Stable softmax of `row` written into `out` (same length).
fn softmax_into<S: Scalar>(row: &[S], out: &mut [S]) {
    let mut max = row[0];
    for &x in &row[1..] {
        if x > max {
            max = x;
        }
    }
    let mut sum = S::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[derive(Debug)]
struct GatHeadState<S> {
    h: Node,
    w: Node,
    a: Node,
    neighbors: Vec<Vec<usize>>,
    activation: Activation,
    slope: S,
    hw: Matrix<S>,      // h * w^T, one projected row per graph node
    raw: Vec<Vec<S>>,   // pre-rectifier scores, aligned with neighbors
    alphas: Vec<Vec<S>>,
    preact: Matrix<S>,  // aggregated messages before the output nonlinearity
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Matmul(Node, Node),
    Add(Node, Node),
    Sub(Node, Node),
    Scale(Node, S),
    Transpose(Node),
    ConcatCols(Node, Node),
    StackRows(Vec<(Node, usize)>),
    SoftmaxRows(Node),
    LeakyRelu(Node, S),
    Gelu(Node),
    Sigmoid(Node),
    RowMean(Node),
    RowL2Normalize(Node, Vec<S>),
    RowLogSumExp(Node),
    Trace(Node),
    SumAll(Node),
    GatherRows(Node, Vec<usize>),
    GatHead(Box<GatHeadState<S>>),
    Bce { p: Node, target: S },
}

impl<S: Scalar> Op<S> {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::ConcatCols(a, b) => {
                vec![a.id, b.id]
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::LeakyRelu(a, _)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::RowMean(a)
            | Op::RowL2Normalize(a, _)
            | Op::RowLogSumExp(a)
            | Op::Trace(a)
            | Op::SumAll(a)
            | Op::GatherRows(a, _) => vec![a.id],
            Op::StackRows(parts) => parts.iter().map(|(n, _)| n.id).collect(),
            Op::GatHead(state) => vec![state.h.id, state.w.id, state.a.id],
            Op::Bce { p, .. } => vec![p.id],
        }
    }
}

struct Inner<S> {
    ops: Vec<Op<S>>,
    values: Vec<Matrix<S>>,
    grads: Vec<Matrix<S>>,
    ran_backward: bool,
}

/// Arena of recorded operations. Interior mutability keeps the builder API
/// ergonomic: ops take `&self` and return fresh [`Node`] handles.
pub struct Tape<S: Scalar> {
    inner: RefCell<Inner<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                ops: Vec::new(),
                values: Vec::new(),
                grads: Vec::new(),
                ran_backward: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix<S>, op: Op<S>) -> Node {
        debug_assert!(value.all_finite(), "tape op produced a non-finite entry");
        let mut inner = self.inner.borrow_mut();
        let id = inner.ops.len();
        inner.grads.push(Matrix::zeros(value.rows(), value.cols()));
        inner.values.push(value);
        inner.ops.push(op);
        Node { id }
    }

    /// Registers an input. Leaves are the only nodes whose gradients are
    /// normally read back after [`Tape::backward`].
    pub fn leaf(&self, value: Matrix<S>) -> Node {
        self.push(value, Op::Leaf)
    }

    /// Current value of a node (cloned out of the arena).
    pub fn value(&self, n: Node) -> Matrix<S> {
        self.inner.borrow().values[n.id].clone()
    }

    /// Gradient buffer of a node; all zeros before backward runs.
    pub fn grad(&self, n: Node) -> Matrix<S> {
        self.inner.borrow().grads[n.id].clone()
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, n: Node) -> S {
        self.inner.borrow().values[n.id].scalar()
    }

    fn shape(&self, n: Node) -> (usize, usize) {
        self.inner.borrow().values[n.id].shape()
    }

    pub fn matmul(&self, a: Node, b: Node) -> Result<Node, NumKitError> {
        let value = {
            let inner = self.inner.borrow();
            inner.values[a.id].matmul(&inner.values[b.id])?
        };
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn add(&self, a: Node, b: Node) -> Result<Node, NumKitError> {
        let value = {
            let inner = self.inner.borrow();
            inner.values[a.id].zip_map(&inner.values[b.id], |x, y| x + y)
        }
        .map_err(|_| NumKitError::ShapeMismatch {
            op: "add",
            left: self.shape(a),
            right: self.shape(b),
        })?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Node, b: Node) -> Result<Node, NumKitError> {
        let value = {
            let inner = self.inner.borrow();
            inner.values[a.id].zip_map(&inner.values[b.id], |x, y| x - y)
        }
        .map_err(|_| NumKitError::ShapeMismatch {
            op: "sub",
            left: self.shape(a),
            right: self.shape(b),
        })?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&self, a: Node, c: S) -> Node {
        let value = self.inner.borrow().values[a.id].map(|x| c * x);
        self.push(value, Op::Scale(a, c))
    }

    pub fn transpose(&self, a: Node) -> Node {
        let value = self.inner.borrow().values[a.id].transposed();
        self.push(value, Op::Transpose(a))
    }

    /// Horizontal concatenation `[a | b]`; row counts must match.
    pub fn concat_cols(&self, a: Node, b: Node) -> Result<Node, NumKitError> {
        let value = {
            let inner = self.inner.borrow();
            let (ma, mb) = (&inner.values[a.id], &inner.values[b.id]);
            if ma.rows() != mb.rows() {
                return Err(NumKitError::ShapeMismatch {
                    op: "concat_cols",
                    left: ma.shape(),
                    right: mb.shape(),
                });
            }
            let mut out = Matrix::zeros(ma.rows(), ma.cols() + mb.cols());
            for i in 0..ma.rows() {
                out.row_mut(i)[..ma.cols()].copy_from_slice(ma.row(i));
                out.row_mut(i)[ma.cols()..].copy_from_slice(mb.row(i));
            }
            out
        };
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    /// Vertical concatenation of one or more nodes with equal column counts.
    pub fn stack_rows(&self, parts: &[Node]) -> Result<Node, NumKitError> {
        assert!(!parts.is_empty(), "stack_rows needs at least one part");
        let value = {
            let inner = self.inner.borrow();
            let cols = inner.values[parts[0].id].cols();
            let mut rows = 0;
            for n in parts {
                let m = &inner.values[n.id];
                if m.cols() != cols {
                    return Err(NumKitError::ShapeMismatch {
                        op: "stack_rows",
                        left: inner.values[parts[0].id].shape(),
                        right: m.shape(),
                    });
                }
                rows += m.rows();
            }
            let mut out = Matrix::zeros(rows, cols);
            let mut at = 0;
            for n in parts {
                let m = &inner.values[n.id];
                for i in 0..m.rows() {
                    out.row_mut(at + i).copy_from_slice(m.row(i));
                }
                at += m.rows();
            }
            out
        };
        let spans = {
            let inner = self.inner.borrow();
            parts
                .iter()
                .map(|&n| (n, inner.values[n.id].rows()))
                .collect()
        };
        Ok(self.push(value, Op::StackRows(spans)))
    }

    /// Row-wise stable softmax; every output row sums to one.
    pub fn softmax_rows(&self, a: Node) -> Node {
        let value = {
            let inner = self.inner.borrow();
            let x = &inner.values[a.id];
            let mut out = Matrix::zeros(x.rows(), x.cols());
            for i in 0..x.rows() {
                softmax_into(x.row(i), out.row_mut(i));
            }
            out
        };
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Element-wise `x if x >= 0 else slope * x`. The derivative at exactly
    /// zero is taken as one. `slope` must lie strictly inside (0, 1).
    pub fn leaky_relu(&self, a: Node, slope: S) -> Result<Node, NumKitError> {
        if !(slope > S::zero() && slope < S::one()) {
            return Err(NumKitError::InvalidSlope(slope.to_real()));
        }
        let value = self.inner.borrow().values[a.id]
            .map(|x| if x >= S::zero() { x } else { slope * x });
        Ok(self.push(value, Op::LeakyRelu(a, slope)))
    }

    /// Element-wise GELU in the tanh form
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&self, a: Node) -> Node {
        let value = self.inner.borrow().values[a.id].map(gelu_value);
        self.push(value, Op::Gelu(a))
    }

    pub fn sigmoid(&self, a: Node) -> Node {
        let value = self.inner.borrow().values[a.id].map(sigmoid_value);
        self.push(value, Op::Sigmoid(a))
    }

    /// Mean over each row; an `n x c` input becomes `n x 1`.
    pub fn row_mean(&self, a: Node) -> Node {
        let value = {
            let inner = self.inner.borrow();
            let x = &inner.values[a.id];
            let inv = S::one() / S::from_usize(x.cols()).expect("cols fits scalar");
            Matrix::from_fn(x.rows(), 1, |i, _| {
                let mut s = S::zero();
                for &v in x.row(i) {
                    s += v;
                }
                s * inv
            })
        };
        self.push(value, Op::RowMean(a))
    }

    /// Scales each row to unit Euclidean norm. A row of zeros has no
    /// direction and is rejected.
    pub fn row_l2_normalize(&self, a: Node) -> Result<Node, NumKitError> {
        let (value, norms) = {
            let inner = self.inner.borrow();
            let x = &inner.values[a.id];
            let mut norms = Vec::with_capacity(x.rows());
            let mut out = Matrix::zeros(x.rows(), x.cols());
            for i in 0..x.rows() {
                let mut sq = S::zero();
                for &v in x.row(i) {
                    sq += v * v;
                }
                let norm = sq.sqrt();
                if norm == S::zero() {
                    return Err(NumKitError::ZeroNormRow { row: i });
                }
                for (o, &v) in out.row_mut(i).iter_mut().zip(x.row(i)) {
                    *o = v / norm;
                }
                norms.push(norm);
            }
            (out, norms)
        };
        Ok(self.push(value, Op::RowL2Normalize(a, norms)))
    }

    /// Stable `log(sum(exp(row)))` per row; an `n x c` input becomes `n x 1`.
    pub fn row_logsumexp(&self, a: Node) -> Node {
        let value = {
            let inner = self.inner.borrow();
            let x = &inner.values[a.id];
            Matrix::from_fn(x.rows(), 1, |i, _| {
                let row = x.row(i);
                let mut max = row[0];
                for &v in &row[1..] {
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = S::zero();
                for &v in row {
                    sum += (v - max).exp();
                }
                max + sum.ln()
            })
        };
        self.push(value, Op::RowLogSumExp(a))
    }

    /// Sum of the main diagonal of a square matrix, as a 1x1 node.
    pub fn trace(&self, a: Node) -> Result<Node, NumKitError> {
        let value = {
            let inner = self.inner.borrow();
            let x = &inner.values[a.id];
            if x.rows() != x.cols() {
                return Err(NumKitError::NotSquare {
                    op: "trace",
                    rows: x.rows(),
                    cols: x.cols(),
                });
            }
            let mut s = S::zero();
            for i in 0..x.rows() {
                s += x[(i, i)];
            }
            Matrix::filled(1, 1, s)
        };
        Ok(self.push(value, Op::Trace(a)))
    }

    /// Sum of every entry, as a 1x1 node.
    pub fn sum_all(&self, a: Node) -> Node {
        let value = {
            let inner = self.inner.borrow();
            let mut s = S::zero();
            for &v in inner.values[a.id].data() {
                s += v;
            }
            Matrix::filled(1, 1, s)
        };
        self.push(value, Op::SumAll(a))
    }

    /// Selects rows by index, repeats allowed; gradients scatter-add back,
    /// so a row gathered twice accumulates both contributions. Indices must
    /// be in range (asserted: they come from validated inputs).
    pub fn gather_rows(&self, a: Node, indices: &[usize]) -> Node {
        assert!(!indices.is_empty(), "gather_rows needs at least one index");
        let value = {
            let inner = self.inner.borrow();
            let x = &inner.values[a.id];
            for &idx in indices {
                assert!(idx < x.rows(), "gather_rows index {idx} out of range");
            }
            let mut out = Matrix::zeros(indices.len(), x.cols());
            for (i, &idx) in indices.iter().enumerate() {
                out.row_mut(i).copy_from_slice(x.row(idx));
            }
            out
        };
        self.push(value, Op::GatherRows(a, indices.to_vec()))
    }

    /// One graph-attention head, fused: project features with `w`, score
    /// each directed edge `i <- j` as `leaky_relu(a . [w h_i || w h_j])`,
    /// normalize scores over each neighborhood with softmax, aggregate the
    /// projected neighbor features, and apply `activation`.
    ///
    /// `h` is `n x d`, `w` is `dh x d`, `a` is `2*dh x 1`. `neighbors[i]`
    /// must be sorted ascending, in range, and contain `i` itself (graphs
    /// from this crate always carry self-loops). Returns the `n x dh` output
    /// and the attention coefficients of every edge.
    pub fn gat_attention_head(
        &self,
        h: Node,
        w: Node,
        a: Node,
        neighbors: &[Vec<usize>],
        activation: Activation,
        slope: S,
    ) -> Result<(Node, GatHeadCoeffs<S>), NumKitError> {
        if !(slope > S::zero() && slope < S::one()) {
            return Err(NumKitError::InvalidSlope(slope.to_real()));
        }
        let (value, state, coeffs) = {
            let inner = self.inner.borrow();
            let hm = &inner.values[h.id];
            let wm = &inner.values[w.id];
            let am = &inner.values[a.id];
            let n = hm.rows();
            let dh = wm.rows();
            if wm.cols() != hm.cols() {
                return Err(NumKitError::ShapeMismatch {
                    op: "gat_attention_head",
                    left: hm.shape(),
                    right: wm.shape(),
                });
            }
            if am.shape() != (2 * dh, 1) {
                return Err(NumKitError::ShapeMismatch {
                    op: "gat_attention_head",
                    left: (2 * dh, 1),
                    right: am.shape(),
                });
            }
            if neighbors.len() != n {
                return Err(NumKitError::BadNeighborhood(format!(
                    "adjacency covers {} nodes but features have {} rows",
                    neighbors.len(),
                    n
                )));
            }
            for (i, nbrs) in neighbors.iter().enumerate() {
                if !nbrs.contains(&i) {
                    return Err(NumKitError::BadNeighborhood(format!(
                        "node {i} is missing its self-loop"
                    )));
                }
                if !nbrs.windows(2).all(|w| w[0] < w[1]) {
                    return Err(NumKitError::BadNeighborhood(format!(
                        "neighborhood of node {i} is not sorted strictly ascending"
                    )));
                }
                if nbrs.iter().any(|&j| j >= n) {
                    return Err(NumKitError::BadNeighborhood(format!(
                        "neighborhood of node {i} references a node out of range"
                    )));
                }
            }

            let hw = hm.matmul(&wm.transposed())?;
            let mut s_src = vec![S::zero(); n];
            let mut s_dst = vec![S::zero(); n];
            for i in 0..n {
                let row = hw.row(i);
                let mut src = S::zero();
                let mut dst = S::zero();
                for f in 0..dh {
                    src += row[f] * am[(f, 0)];
                    dst += row[f] * am[(dh + f, 0)];
                }
                s_src[i] = src;
                s_dst[i] = dst;
            }

            let mut raw = Vec::with_capacity(n);
            let mut alphas = Vec::with_capacity(n);
            let mut entries = Vec::with_capacity(n);
            let mut preact = Matrix::zeros(n, dh);
            for (i, nbrs) in neighbors.iter().enumerate() {
                let c: Vec<S> = nbrs.iter().map(|&j| s_src[i] + s_dst[j]).collect();
                let e: Vec<S> = c
                    .iter()
                    .map(|&x| if x >= S::zero() { x } else { slope * x })
                    .collect();
                let mut alpha = vec![S::zero(); e.len()];
                softmax_into(&e, &mut alpha);
                let zi = preact.row_mut(i);
                for (k, &j) in nbrs.iter().enumerate() {
                    let hwj = hw.row(j);
                    for f in 0..dh {
                        zi[f] += alpha[k] * hwj[f];
                    }
                }
                entries.push(
                    nbrs.iter()
                        .enumerate()
                        .map(|(k, &j)| (j, e[k], alpha[k]))
                        .collect(),
                );
                raw.push(c);
                alphas.push(alpha);
            }

            let out = preact.map(|z| match activation {
                Activation::Gelu => gelu_value(z),
                Activation::Relu => {
                    if z > S::zero() {
                        z
                    } else {
                        S::zero()
                    }
                }
            });
            let state = GatHeadState {
                h,
                w,
                a,
                neighbors: neighbors.to_vec(),
                activation,
                slope,
                hw,
                raw,
                alphas,
                preact,
            };
            (out, state, GatHeadCoeffs { entries })
        };
        let node = self.push(value, Op::GatHead(Box::new(state)));
        Ok((node, coeffs))
    }

    /// Binary cross-entropy of a 1x1 probability node against a 0/1 target,
    /// with the probability clamped to `[1e-7, 1 - 1e-7]` before the logs.
    /// Inside the clamp band the loss is constant, so its gradient is zero
    /// there.
    pub fn bce(&self, p: Node, target: S) -> Result<Node, NumKitError> {
        let value = {
            let inner = self.inner.borrow();
            let pm = &inner.values[p.id];
            if pm.shape() != (1, 1) {
                return Err(NumKitError::NonScalarLoss {
                    rows: pm.rows(),
                    cols: pm.cols(),
                });
            }
            let praw = pm.scalar();
            if praw < S::zero() || praw > S::one() {
                return Err(NumKitError::BadProbability { p: praw.to_real() });
            }
            let eps = S::lit(BCE_CLAMP);
            let pc = praw.max(eps).min(S::one() - eps);
            let loss = -(target * pc.ln() + (S::one() - target) * (S::one() - pc).ln());
            Matrix::filled(1, 1, loss)
        };
        Ok(self.push(value, Op::Bce { p, target }))
    }

    /// Resets every gradient buffer to zero and re-arms backward.
    pub fn zero_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        for g in inner.grads.iter_mut() {
            g.fill(S::zero());
        }
        inner.ran_backward = false;
    }

    /// Reverse sweep from a 1x1 loss node. Seeds the loss gradient with one,
    /// then walks the arena backwards, propagating into every reachable
    /// parent. Errors if the loss is not scalar or if backward already ran
    /// since the last [`Tape::zero_grads`].
    pub fn backward(&self, loss: Node) -> Result<(), NumKitError> {
        let mut borrow = self.inner.borrow_mut();
        let inner = &mut *borrow;
        if inner.ran_backward {
            return Err(NumKitError::BackwardAlreadyRun);
        }
        let (r, c) = inner.values[loss.id].shape();
        if (r, c) != (1, 1) {
            return Err(NumKitError::NonScalarLoss { rows: r, cols: c });
        }
        inner.ran_backward = true;

        let ops = &inner.ops;
        let values = &inner.values;
        let grads = &mut inner.grads;
        let one = S::one();

        let mut touched = vec![false; ops.len()];
        touched[loss.id] = true;
        grads[loss.id] = Matrix::filled(1, 1, one);

        for id in (0..=loss.id).rev() {
            if !touched[id] {
                continue;
            }
            // Arena order is the topological order: every operand of a node
            // precedes it. A violation means the arena was corrupted.
            for p in ops[id].parents() {
                if p >= id {
                    return Err(NumKitError::CycleDetected { child: id, parent: p });
                }
                touched[p] = true;
            }
            let g = grads[id].clone();
            match &ops[id] {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let ga = g.matmul(&values[b.id].transposed())?;
                    grads[a.id].add_scaled(&ga, one)?;
                    let gb = values[a.id].transposed().matmul(&g)?;
                    grads[b.id].add_scaled(&gb, one)?;
                }
                Op::Add(a, b) => {
                    grads[a.id].add_scaled(&g, one)?;
                    grads[b.id].add_scaled(&g, one)?;
                }
                Op::Sub(a, b) => {
                    grads[a.id].add_scaled(&g, one)?;
                    grads[b.id].add_scaled(&g, -one)?;
                }
                Op::Scale(a, c) => {
                    grads[a.id].add_scaled(&g, *c)?;
                }
                Op::Transpose(a) => {
                    grads[a.id].add_scaled(&g.transposed(), one)?;
                }
                Op::ConcatCols(a, b) => {
                    let ca = values[a.id].cols();
                    let ga = &mut grads[a.id];
                    for i in 0..g.rows() {
                        for (j, &v) in g.row(i)[..ca].iter().enumerate() {
                            ga[(i, j)] += v;
                        }
                    }
                    let gb = &mut grads[b.id];
                    for i in 0..g.rows() {
                        for (j, &v) in g.row(i)[ca..].iter().enumerate() {
                            gb[(i, j)] += v;
                        }
                    }
                }
                Op::StackRows(parts) => {
                    let mut at = 0;
                    for &(n, rows) in parts {
                        let gp = &mut grads[n.id];
                        for i in 0..rows {
                            for (j, &v) in g.row(at + i).iter().enumerate() {
                                gp[(i, j)] += v;
                            }
                        }
                        at += rows;
                    }
                }
                Op::SoftmaxRows(a) => {
                    // dx = y * (g - <g, y>) per row, with y this node's value
                    let y = &values[id];
                    let ga = &mut grads[a.id];
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let mut dot = S::zero();
                        for (yk, gk) in yr.iter().zip(gr) {
                            dot += *yk * *gk;
                        }
                        for j in 0..yr.len() {
                            ga[(i, j)] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &values[a.id];
                    let ga = &mut grads[a.id];
                    for i in 0..x.rows() {
                        for j in 0..x.cols() {
                            let d = if x[(i, j)] >= S::zero() { one } else { *slope };
                            ga[(i, j)] += g[(i, j)] * d;
                        }
                    }
                }
                Op::Gelu(a) => {
                    let x = &values[a.id];
                    let ga = &mut grads[a.id];
                    for i in 0..x.rows() {
                        for j in 0..x.cols() {
                            ga[(i, j)] += g[(i, j)] * gelu_deriv(x[(i, j)]);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let s = &values[id];
                    let ga = &mut grads[a.id];
                    for i in 0..s.rows() {
                        for j in 0..s.cols() {
                            let sv = s[(i, j)];
                            ga[(i, j)] += g[(i, j)] * sv * (one - sv);
                        }
                    }
                }
                Op::RowMean(a) => {
                    let cols = values[a.id].cols();
                    let inv = one / S::from_usize(cols).expect("cols fits scalar");
                    let ga = &mut grads[a.id];
                    for i in 0..ga.rows() {
                        let gi = g[(i, 0)] * inv;
                        for j in 0..cols {
                            ga[(i, j)] += gi;
                        }
                    }
                }
                Op::RowL2Normalize(a, norms) => {
                    // y = x / |x|; dx = (g - y <y, g>) / |x| per row
                    let y = &values[id];
                    let ga = &mut grads[a.id];
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let mut dot = S::zero();
                        for (yk, gk) in yr.iter().zip(gr) {
                            dot += *yk * *gk;
                        }
                        for j in 0..yr.len() {
                            ga[(i, j)] += (gr[j] - yr[j] * dot) / norms[i];
                        }
                    }
                }
                Op::RowLogSumExp(a) => {
                    let x = &values[a.id];
                    let ga = &mut grads[a.id];
                    let mut soft = vec![S::zero(); x.cols()];
                    for i in 0..x.rows() {
                        softmax_into(x.row(i), &mut soft);
                        let gi = g[(i, 0)];
                        for j in 0..x.cols() {
                            ga[(i, j)] += gi * soft[j];
                        }
                    }
                }
                Op::Trace(a) => {
                    let gs = g.scalar();
                    let ga = &mut grads[a.id];
                    for i in 0..ga.rows() {
                        ga[(i, i)] += gs;
                    }
                }
                Op::SumAll(a) => {
                    let gs = g.scalar();
                    for v in grads[a.id].data_mut() {
                        *v += gs;
                    }
                }
                Op::GatherRows(a, indices) => {
                    let ga = &mut grads[a.id];
                    for (i, &idx) in indices.iter().enumerate() {
                        for (j, &v) in g.row(i).iter().enumerate() {
                            ga[(idx, j)] += v;
                        }
                    }
                }
                Op::GatHead(state) => {
                    backward_gat_head(state, &g, values, grads)?;
                }
                Op::Bce { p, target } => {
                    let praw = values[p.id].scalar();
                    let eps = S::lit(BCE_CLAMP);
                    let gp = &mut grads[p.id];
                    if praw >= eps && praw <= one - eps {
                        let d = (praw - *target) / (praw * (one - praw));
                        gp[(0, 0)] += g.scalar() * d;
                    }
                }
            }
        }
        Ok(())
    }
}

fn backward_gat_head<S: Scalar>(
    state: &GatHeadState<S>,
    g: &Matrix<S>,
    values: &[Matrix<S>],
    grads: &mut [Matrix<S>],
) -> Result<(), NumKitError> {
    let n = state.hw.rows();
    let dh = state.hw.cols();
    let one = S::one();

    // dL/dz through the output nonlinearity
    let mut dz = Matrix::zeros(n, dh);
    for i in 0..n {
        for f in 0..dh {
            let z = state.preact[(i, f)];
            let d = match state.activation {
                Activation::Gelu => gelu_deriv(z),
                // subgradient at zero taken as one, as for leaky_relu
                Activation::Relu => {
                    if z >= S::zero() {
                        one
                    } else {
                        S::zero()
                    }
                }
            };
            dz[(i, f)] = g[(i, f)] * d;
        }
    }

    let mut dhw = Matrix::zeros(n, dh);
    let mut ds_src = vec![S::zero(); n];
    let mut ds_dst = vec![S::zero(); n];
    for i in 0..n {
        let nbrs = &state.neighbors[i];
        let alpha = &state.alphas[i];
        let raw = &state.raw[i];
        let dzi = dz.row(i);

        let mut dalpha = vec![S::zero(); nbrs.len()];
        for (k, &j) in nbrs.iter().enumerate() {
            let hwj = state.hw.row(j);
            let mut dot = S::zero();
            for f in 0..dh {
                dot += dzi[f] * hwj[f];
            }
            dalpha[k] = dot;
            let drow = dhw.row_mut(j);
            for f in 0..dh {
                drow[f] += alpha[k] * dzi[f];
            }
        }
        let mut inner = S::zero();
        for k in 0..nbrs.len() {
            inner += alpha[k] * dalpha[k];
        }
        for (k, &j) in nbrs.iter().enumerate() {
            let de = alpha[k] * (dalpha[k] - inner);
            let dc = de * if raw[k] >= S::zero() { one } else { state.slope };
            ds_src[i] += dc;
            ds_dst[j] += dc;
        }
    }

    // scores are linear in hw and a: s_src = hw a[..dh], s_dst = hw a[dh..]
    let am = &values[state.a.id];
    let mut da = Matrix::zeros(2 * dh, 1);
    for i in 0..n {
        let hwi = state.hw.row(i);
        let drow = dhw.row_mut(i);
        for f in 0..dh {
            drow[f] += ds_src[i] * am[(f, 0)] + ds_dst[i] * am[(dh + f, 0)];
            da[(f, 0)] += ds_src[i] * hwi[f];
            da[(dh + f, 0)] += ds_dst[i] * hwi[f];
        }
    }

    // hw = h w^T
    let wm = &values[state.w.id];
    let hm = &values[state.h.id];
    grads[state.h.id].add_scaled(&dhw.matmul(wm)?, one)?;
    grads[state.w.id].add_scaled(&dhw.transposed().matmul(hm)?, one)?;
    grads[state.a.id].add_scaled(&da, one)?;
    Ok(())
}
