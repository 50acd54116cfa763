//! Tape-based reverse-mode automatic differentiation over small dense
//! matrices.
//!
//! Every operation appends a node to a flat [`Tape`]; forward values of all
//! nodes live in one contiguous buffer, so recording a few thousand nodes per
//! training example costs no per-node allocation. [`Tape::backward`] walks the
//! nodes once in reverse order and accumulates adjoints into a second buffer
//! of the same layout.
//!
//! Tensors on the tape are matrices (`rows × cols`, row-major). A rank-1
//! [`Tensor`] of length `n` enters the tape as an `n × 1` column.
//!
//! ```
//! use monoalign::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(&Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
//! let y = tape.mul(x, x).unwrap();
//! let t = tape.leaf(&Tensor::zeros(&[3])).unwrap();
//! let loss = tape.mse(y, t).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).len(), 3);
//! ```

use thiserror::Error;

use crate::align::{alignment_loss_grad_raw, alignment_loss_raw, AlignError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("tensor shape {shape:?} does not match data length {len}")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("tensor rank {0} is not supported on the tape (max 2)")]
    UnsupportedRank(usize),
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward root must be a scalar, got shape {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("{op}: index {index} out of range for {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("alignment loss: {0}")]
    Align(#[from] AlignError),
}

/// Dense double-precision array of rank 1 to 3, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, AutodiffError> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 3 || shape.contains(&0) || len != data.len() {
            return Err(AutodiffError::BadTensor {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![x],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(&[rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.matrix_dims().map_or(1, |(_, c)| c);
        &self.data[r * cols..(r + 1) * cols]
    }

    /// `(rows, cols)` as seen by the tape.
    pub fn matrix_dims(&self) -> Result<(usize, usize), AutodiffError> {
        match *self.shape.as_slice() {
            [n] => Ok((n, 1)),
            [r, c] => Ok((r, c)),
            _ => Err(AutodiffError::UnsupportedRank(self.shape.len())),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation tags, used for diagnostics and gradient-check reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    AddRow,
    Sub,
    Mul,
    Scale,
    MatMul,
    MatMulTn,
    Tanh,
    Sigmoid,
    SoftmaxCols,
    Conv1d,
    Embedding,
    Concat,
    Mse,
    AlignLoss,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::AddRow => "add_row",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::MatMul => "matmul",
            OpKind::MatMulTn => "matmul_tn",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::SoftmaxCols => "softmax_cols",
            OpKind::Conv1d => "conv1d",
            OpKind::Embedding => "embedding",
            OpKind::Concat => "concat",
            OpKind::Mse => "mse",
            OpKind::AlignLoss => "align_loss",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        const ALL: [OpKind; 16] = [
            OpKind::Leaf,
            OpKind::Add,
            OpKind::AddRow,
            OpKind::Sub,
            OpKind::Mul,
            OpKind::Scale,
            OpKind::MatMul,
            OpKind::MatMulTn,
            OpKind::Tanh,
            OpKind::Sigmoid,
            OpKind::SoftmaxCols,
            OpKind::Conv1d,
            OpKind::Embedding,
            OpKind::Concat,
            OpKind::Mse,
            OpKind::AlignLoss,
        ];
        ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    MatMulTn(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    SoftmaxCols(usize),
    Conv1d { input: usize, kernel: usize },
    Embedding { table: usize, ids: usize },
    Concat { axis: Axis, args: usize, count: usize },
    Mse(usize, usize),
    AlignLoss { input: usize, delta: f64 },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulTn(..) => OpKind::MatMulTn,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::SoftmaxCols(..) => OpKind::SoftmaxCols,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::Concat { .. } => OpKind::Concat,
            Op::Mse(..) => OpKind::Mse,
            Op::AlignLoss { .. } => OpKind::AlignLoss,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    offset: usize,
}

impl Node {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Append-only record of operations and their forward values.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    grads: Vec<f64>,
    // variable-length operands: concat inputs and embedding ids
    args: Vec<usize>,
    fault: Option<OpKind>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops all nodes but keeps the buffers for reuse.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.grads.clear();
        self.args.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Corrupts the backward rule of one op kind (scales its incoming
    /// adjoint by 1.5). Used to prove gradient checks catch broken rules.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[self.nodes[v.0].range()]
    }

    pub fn value_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: vec![n.rows, n.cols],
            data: self.value(v).to_vec(),
        }
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Adjoint of `v` after [`Tape::backward`]; zeros if untouched.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.grads[self.nodes[v.0].range()]
    }

    pub fn leaf(&mut self, t: &Tensor) -> Result<Var, AutodiffError> {
        let (rows, cols) = t.matrix_dims()?;
        self.leaf_slice(rows, cols, &t.data)
    }

    pub fn leaf_slice(&mut self, rows: usize, cols: usize, data: &[f64]) -> Result<Var, AutodiffError> {
        if rows * cols != data.len() || data.is_empty() {
            return Err(AutodiffError::BadTensor {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        let offset = self.values.len();
        self.values.extend_from_slice(data);
        Ok(self.push_node(Op::Leaf, rows, cols, offset))
    }

    fn push_node(&mut self, op: Op, rows: usize, cols: usize, offset: usize) -> Var {
        self.nodes.push(Node {
            op,
            rows,
            cols,
            offset,
        });
        Var(self.nodes.len() - 1)
    }

    /// Allocates the output region, runs `fill(inputs, out)` where `inputs`
    /// is every value recorded so far, and records the node if the output is
    /// finite.
    fn record<F>(
        &mut self,
        op: Op,
        rows: usize,
        cols: usize,
        name: &'static str,
        fill: F,
    ) -> Result<Var, AutodiffError>
    where
        F: FnOnce(&[f64], &[usize], &mut [f64]),
    {
        let offset = self.values.len();
        self.values.resize(offset + rows * cols, 0.0);
        let (inputs, out) = self.values.split_at_mut(offset);
        fill(inputs, &self.args, out);
        if out.iter().any(|x| !x.is_finite()) {
            self.values.truncate(offset);
            return Err(AutodiffError::NonFinite { op: name });
        }
        Ok(self.push_node(op, rows, cols, offset))
    }

    fn node(&self, v: Var) -> Node {
        self.nodes[v.0]
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(Node, Node), AutodiffError> {
        let (na, nb) = (self.node(a), self.node(b));
        if (na.rows, na.cols) != (nb.rows, nb.cols) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: (na.rows, na.cols),
                right: (nb.rows, nb.cols),
            });
        }
        Ok((na, nb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (na, nb) = self.same_shape("add", a, b)?;
        self.record(Op::Add(a.0, b.0), na.rows, na.cols, "add", |v, _, out| {
            for ((o, x), y) in out.iter_mut().zip(&v[na.range()]).zip(&v[nb.range()]) {
                *o = x + y;
            }
        })
    }

    /// `a + 1·row`: adds a `1×cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (na, nr) = (self.node(a), self.node(row));
        if nr.rows != 1 || nr.cols != na.cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: (na.rows, na.cols),
                right: (nr.rows, nr.cols),
            });
        }
        self.record(Op::AddRow(a.0, row.0), na.rows, na.cols, "add_row", |v, _, out| {
            let r = &v[nr.range()];
            for (o_row, a_row) in out.chunks_mut(na.cols).zip(v[na.range()].chunks(na.cols)) {
                for ((o, x), y) in o_row.iter_mut().zip(a_row).zip(r) {
                    *o = x + y;
                }
            }
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (na, nb) = self.same_shape("sub", a, b)?;
        self.record(Op::Sub(a.0, b.0), na.rows, na.cols, "sub", |v, _, out| {
            for ((o, x), y) in out.iter_mut().zip(&v[na.range()]).zip(&v[nb.range()]) {
                *o = x - y;
            }
        })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (na, nb) = self.same_shape("mul", a, b)?;
        self.record(Op::Mul(a.0, b.0), na.rows, na.cols, "mul", |v, _, out| {
            for ((o, x), y) in out.iter_mut().zip(&v[na.range()]).zip(&v[nb.range()]) {
                *o = x * y;
            }
        })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let na = self.node(a);
        self.record(Op::Scale(a.0, factor), na.rows, na.cols, "scale", |v, _, out| {
            for (o, x) in out.iter_mut().zip(&v[na.range()]) {
                *o = x * factor;
            }
        })
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.cols != nb.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: (na.rows, na.cols),
                right: (nb.rows, nb.cols),
            });
        }
        let (r, k, c) = (na.rows, na.cols, nb.cols);
        self.record(Op::MatMul(a.0, b.0), r, c, "matmul", |v, _, out| {
            let (av, bv) = (&v[na.range()], &v[nb.range()]);
            for i in 0..r {
                let o_row = &mut out[i * c..(i + 1) * c];
                for p in 0..k {
                    let x = av[i * k + p];
                    for (o, y) in o_row.iter_mut().zip(&bv[p * c..(p + 1) * c]) {
                        *o += x * y;
                    }
                }
            }
        })
    }

    /// `aᵀ · b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.rows != nb.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul_tn",
                left: (na.rows, na.cols),
                right: (nb.rows, nb.cols),
            });
        }
        let (k, r, c) = (na.rows, na.cols, nb.cols);
        self.record(Op::MatMulTn(a.0, b.0), r, c, "matmul_tn", |v, _, out| {
            let (av, bv) = (&v[na.range()], &v[nb.range()]);
            for p in 0..k {
                let b_row = &bv[p * c..(p + 1) * c];
                for i in 0..r {
                    let x = av[p * r + i];
                    for (o, y) in out[i * c..(i + 1) * c].iter_mut().zip(b_row) {
                        *o += x * y;
                    }
                }
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let na = self.node(a);
        self.record(Op::Tanh(a.0), na.rows, na.cols, "tanh", |v, _, out| {
            for (o, x) in out.iter_mut().zip(&v[na.range()]) {
                *o = x.tanh();
            }
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let na = self.node(a);
        self.record(Op::Sigmoid(a.0), na.rows, na.cols, "sigmoid", |v, _, out| {
            for (o, x) in out.iter_mut().zip(&v[na.range()]) {
                *o = 1.0 / (1.0 + (-x).exp());
            }
        })
    }

    /// Softmax down each column.
    pub fn softmax_cols(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let na = self.node(a);
        let (r, c) = (na.rows, na.cols);
        self.record(Op::SoftmaxCols(a.0), r, c, "softmax_cols", |v, _, out| {
            let av = &v[na.range()];
            for j in 0..c {
                let max = (0..r).map(|i| av[i * c + j]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for i in 0..r {
                    let e = (av[i * c + j] - max).exp();
                    out[i * c + j] = e;
                    sum += e;
                }
                for i in 0..r {
                    out[i * c + j] /= sum;
                }
            }
        })
    }

    /// Zero-padded "same" convolution, stride 1, of a single-channel `n×1`
    /// signal with a `filters×k` kernel bank (odd `k`). Output is
    /// `n×filters`: `out[i, f] = Σ_t w[f, t] · x[i + t − k/2]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var) -> Result<Var, AutodiffError> {
        let (nx, nw) = (self.node(input), self.node(kernel));
        if nx.cols != 1 || nw.cols % 2 == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv1d",
                left: (nx.rows, nx.cols),
                right: (nw.rows, nw.cols),
            });
        }
        let (n, filters, k) = (nx.rows, nw.rows, nw.cols);
        let half = k / 2;
        let op = Op::Conv1d {
            input: input.0,
            kernel: kernel.0,
        };
        self.record(op, n, filters, "conv1d", |v, _, out| {
            let (x, w) = (&v[nx.range()], &v[nw.range()]);
            for i in 0..n {
                for t in 0..k {
                    let src = i + t;
                    if src < half || src - half >= n {
                        continue;
                    }
                    let xv = x[src - half];
                    for f in 0..filters {
                        out[i * filters + f] += w[f * k + t] * xv;
                    }
                }
            }
        })
    }

    /// Gathers rows of `table` (`vocab×dim`) → `ids.len()×dim`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let nt = self.node(table);
        if ids.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "embedding",
                reason: "empty id list".into(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= nt.rows) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "embedding",
                index: bad,
                bound: nt.rows,
            });
        }
        let start = self.args.len();
        self.args.push(ids.len());
        self.args.extend_from_slice(ids);
        let dim = nt.cols;
        let op = Op::Embedding {
            table: table.0,
            ids: start,
        };
        self.record(op, ids.len(), dim, "embedding", |v, args, out| {
            let table = &v[nt.range()];
            let ids = &args[start + 1..start + 1 + args[start]];
            for (o_row, &id) in out.chunks_mut(dim).zip(ids) {
                o_row.copy_from_slice(&table[id * dim..(id + 1) * dim]);
            }
        })
    }

    /// Concatenation along rows (stacking) or columns (side by side).
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, AutodiffError> {
        let first = match parts.first() {
            Some(&p) => self.node(p),
            None => {
                return Err(AutodiffError::InvalidArgument {
                    op: "concat",
                    reason: "no inputs".into(),
                })
            }
        };
        let (mut rows, mut cols) = (first.rows, first.cols);
        for &p in &parts[1..] {
            let n = self.node(p);
            let ok = match axis {
                Axis::Rows => n.cols == first.cols,
                Axis::Cols => n.rows == first.rows,
            };
            if !ok {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: (first.rows, first.cols),
                    right: (n.rows, n.cols),
                });
            }
            match axis {
                Axis::Rows => rows += n.rows,
                Axis::Cols => cols += n.cols,
            }
        }
        let start = self.args.len();
        self.args.extend(parts.iter().map(|p| p.0));
        let op = Op::Concat {
            axis,
            args: start,
            count: parts.len(),
        };
        let nodes = &self.nodes;
        let (inputs, out_rows, out_cols) = (
            parts.iter().map(|p| nodes[p.0]).collect::<Vec<_>>(),
            rows,
            cols,
        );
        self.record(op, out_rows, out_cols, "concat", |v, _, out| match axis {
            Axis::Rows => {
                let mut at = 0;
                for n in &inputs {
                    out[at..at + n.len()].copy_from_slice(&v[n.range()]);
                    at += n.len();
                }
            }
            Axis::Cols => {
                let mut col0 = 0;
                for n in &inputs {
                    let src = &v[n.range()];
                    for i in 0..out_rows {
                        out[i * out_cols + col0..i * out_cols + col0 + n.cols]
                            .copy_from_slice(&src[i * n.cols..(i + 1) * n.cols]);
                    }
                    col0 += n.cols;
                }
            }
        })
    }

    /// Mean of squared differences over all entries.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, AutodiffError> {
        let (np, nt) = self.same_shape("mse", pred, target)?;
        self.record(Op::Mse(pred.0, target.0), 1, 1, "mse", |v, _, out| {
            let sum: f64 = v[np.range()]
                .iter()
                .zip(&v[nt.range()])
                .map(|(p, t)| (p - t) * (p - t))
                .sum();
            out[0] = sum / np.len() as f64;
        })
    }

    /// Monotonic alignment loss of an `N×M` attention matrix node.
    pub fn align_loss(&mut self, alignment: Var, delta: f64) -> Result<Var, AutodiffError> {
        let na = self.node(alignment);
        let loss = alignment_loss_raw(na.rows, na.cols, &self.values[na.range()], delta)?;
        let op = Op::AlignLoss {
            input: alignment.0,
            delta,
        };
        self.record(op, 1, 1, "align_loss", |_, _, out| out[0] = loss)
    }

    /// Accumulates `∂root/∂node` for every node recorded up to `root`.
    /// Fan-out contributions add; nodes not upstream of `root` get zeros.
    pub fn backward(&mut self, root: Var) -> Result<(), AutodiffError> {
        let rn = self.node(root);
        if rn.len() != 1 {
            return Err(AutodiffError::NonScalarRoot {
                rows: rn.rows,
                cols: rn.cols,
            });
        }
        self.grads.clear();
        self.grads.resize(self.values.len(), 0.0);
        self.grads[rn.offset] = 1.0;

        for idx in (0..=root.0).rev() {
            let node = self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = self.grads.split_at_mut(node.offset);
            let g = &mut upper[..node.len()];
            if self.fault == Some(node.op.kind()) {
                g.iter_mut().for_each(|x| *x *= 1.5);
            }
            let g: &[f64] = g;
            let v = &self.values;
            let nodes = &self.nodes;
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut lower[nodes[a].range()], g, 1.0);
                    accumulate(&mut lower[nodes[b].range()], g, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut lower[nodes[a].range()], g, 1.0);
                    accumulate(&mut lower[nodes[b].range()], g, -1.0);
                }
                Op::AddRow(a, r) => {
                    accumulate(&mut lower[nodes[a].range()], g, 1.0);
                    let gr = &mut lower[nodes[r].range()];
                    for g_row in g.chunks(node.cols) {
                        for (o, x) in gr.iter_mut().zip(g_row) {
                            *o += x;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (na, nb) = (nodes[a], nodes[b]);
                    for ((o, gi), y) in lower[na.range()].iter_mut().zip(g).zip(&v[nb.range()]) {
                        *o += gi * y;
                    }
                    for ((o, gi), x) in lower[nb.range()].iter_mut().zip(g).zip(&v[na.range()]) {
                        *o += gi * x;
                    }
                }
                Op::Scale(a, factor) => {
                    accumulate(&mut lower[nodes[a].range()], g, factor);
                }
                Op::MatMul(a, b) => {
                    let (na, nb) = (nodes[a], nodes[b]);
                    let (r, k, c) = (na.rows, na.cols, nb.cols);
                    let (av, bv) = (&v[na.range()], &v[nb.range()]);
                    {
                        let ga = &mut lower[na.range()];
                        for i in 0..r {
                            let g_row = &g[i * c..(i + 1) * c];
                            for p in 0..k {
                                let b_row = &bv[p * c..(p + 1) * c];
                                ga[i * k + p] += dot(g_row, b_row);
                            }
                        }
                    }
                    let gb = &mut lower[nb.range()];
                    for i in 0..r {
                        let g_row = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            let x = av[i * k + p];
                            for (o, gi) in gb[p * c..(p + 1) * c].iter_mut().zip(g_row) {
                                *o += x * gi;
                            }
                        }
                    }
                }
                Op::MatMulTn(a, b) => {
                    let (na, nb) = (nodes[a], nodes[b]);
                    let (k, r, c) = (na.rows, na.cols, nb.cols);
                    let (av, bv) = (&v[na.range()], &v[nb.range()]);
                    {
                        let ga = &mut lower[na.range()];
                        for p in 0..k {
                            let b_row = &bv[p * c..(p + 1) * c];
                            for i in 0..r {
                                ga[p * r + i] += dot(&g[i * c..(i + 1) * c], b_row);
                            }
                        }
                    }
                    let gb = &mut lower[nb.range()];
                    for p in 0..k {
                        for i in 0..r {
                            let x = av[p * r + i];
                            for (o, gi) in gb[p * c..(p + 1) * c].iter_mut().zip(&g[i * c..(i + 1) * c]) {
                                *o += x * gi;
                            }
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = &v[node.range()];
                    for ((o, gi), yi) in lower[nodes[a].range()].iter_mut().zip(g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &v[node.range()];
                    for ((o, gi), yi) in lower[nodes[a].range()].iter_mut().zip(g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
                Op::SoftmaxCols(a) => {
                    let (r, c) = (node.rows, node.cols);
                    let y = &v[node.range()];
                    let ga = &mut lower[nodes[a].range()];
                    for j in 0..c {
                        let inner: f64 = (0..r).map(|i| g[i * c + j] * y[i * c + j]).sum();
                        for i in 0..r {
                            ga[i * c + j] += y[i * c + j] * (g[i * c + j] - inner);
                        }
                    }
                }
                Op::Conv1d { input, kernel } => {
                    let (nx, nw) = (nodes[input], nodes[kernel]);
                    let (n, filters, k) = (nx.rows, nw.rows, nw.cols);
                    let half = k / 2;
                    let (x, w) = (&v[nx.range()], &v[nw.range()]);
                    for i in 0..n {
                        for t in 0..k {
                            let src = i + t;
                            if src < half || src - half >= n {
                                continue;
                            }
                            let s = src - half;
                            let g_row = &g[i * filters..(i + 1) * filters];
                            let mut gx = 0.0;
                            for f in 0..filters {
                                gx += w[f * k + t] * g_row[f];
                            }
                            lower[nx.offset + s] += gx;
                            for f in 0..filters {
                                lower[nw.offset + f * k + t] += x[s] * g_row[f];
                            }
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let nt = nodes[table];
                    let dim = nt.cols;
                    let ids = &self.args[ids + 1..ids + 1 + self.args[ids]];
                    let gt = &mut lower[nt.range()];
                    for (g_row, &id) in g.chunks(dim).zip(ids) {
                        accumulate(&mut gt[id * dim..(id + 1) * dim], g_row, 1.0);
                    }
                }
                Op::Concat { axis, args, count } => {
                    let parts = &self.args[args..args + count];
                    match axis {
                        Axis::Rows => {
                            let mut at = 0;
                            for &p in parts {
                                let n = nodes[p];
                                accumulate(&mut lower[n.range()], &g[at..at + n.len()], 1.0);
                                at += n.len();
                            }
                        }
                        Axis::Cols => {
                            let mut col0 = 0;
                            for &p in parts {
                                let n = nodes[p];
                                let gp = &mut lower[n.range()];
                                for i in 0..node.rows {
                                    let src = &g[i * node.cols + col0..i * node.cols + col0 + n.cols];
                                    accumulate(&mut gp[i * n.cols..(i + 1) * n.cols], src, 1.0);
                                }
                                col0 += n.cols;
                            }
                        }
                    }
                }
                Op::Mse(p, t) => {
                    let (np, nt) = (nodes[p], nodes[t]);
                    let scale = 2.0 * g[0] / np.len() as f64;
                    let (pv, tv) = (&v[np.range()], &v[nt.range()]);
                    for ((o, a), b) in lower[np.range()].iter_mut().zip(pv).zip(tv) {
                        *o += scale * (a - b);
                    }
                    for ((o, a), b) in lower[nt.range()].iter_mut().zip(pv).zip(tv) {
                        *o -= scale * (a - b);
                    }
                }
                Op::AlignLoss { input, delta } => {
                    let na = nodes[input];
                    let local = alignment_loss_grad_raw(na.rows, na.cols, &v[na.range()], delta)?;
                    accumulate(&mut lower[na.range()], &local, g[0]);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Checks the gradient of the scalar function built by `f` at `x` against
/// central differences `(f(x + h·e) − f(x − h·e)) / 2h`.
///
/// `f` records its computation on the supplied tape starting from the leaf
/// for `x` and returns the scalar output node.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::InvalidArgument {
            op: "finite_diff_check",
            reason: format!("step must be positive, got {step}"),
        });
    }
    let mut tape = Tape::new();
    let leaf = tape.leaf(x)?;
    let root = f(&mut tape, leaf)?;
    tape.backward(root)?;
    let analytic = tape.grad(leaf).to_vec();

    let eval = |data: Vec<f64>| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(&Tensor::new(x.shape(), data)?)?;
        let out = f(&mut tape, leaf)?;
        Ok(tape.scalar(out))
    };
    let mut numeric = Vec::with_capacity(x.len());
    let mut max_rel_error: f64 = 0.0;
    for k in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[k] += step;
        let mut minus = x.data().to_vec();
        minus[k] -= step;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * step);
        max_rel_error = max_rel_error.max(relative_error(analytic[k], fd));
        numeric.push(fd);
    }
    Ok(GradCheck {
        max_rel_error,
        analytic,
        numeric,
    })
}
