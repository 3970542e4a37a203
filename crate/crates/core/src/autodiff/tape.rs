//! Wengert tape over dense tensors.
//!
//! Every primitive appends one node holding its output value and the
//! information its backward rule needs. Nodes are only ever appended, so
//! the node order is a topological order and a single reverse sweep from
//! the loss reaches every contributing tensor.

use super::{AutodiffError, Tensor};

/// SELU scale.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// SELU negative-branch coefficient.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

const LAYER_NORM_EPS: f64 = 1e-5;
/// Probability clamp used inside binary cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Names of the recorded primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRowVector,
    MulRowVector,
    ScaleRows,
    ScaleBy,
    Affine,
    Sigmoid,
    Selu,
    Relu,
    Abs,
    SoftmaxRows,
    LayerNormRows,
    MaxPoolRows,
    MeanRows,
    Sum,
    Mean,
    Slice,
    SliceCols,
    ConcatCols,
    StackRows,
    GatherRows,
    SegmentMean,
    Cosine,
    BinaryCrossEntropy,
    Threshold,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::Leaf => "leaf",
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::AddRowVector => "add_row_vector",
            Primitive::MulRowVector => "mul_row_vector",
            Primitive::ScaleRows => "scale_rows",
            Primitive::ScaleBy => "scale_by",
            Primitive::Affine => "affine",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Selu => "selu",
            Primitive::Relu => "relu",
            Primitive::Abs => "abs",
            Primitive::SoftmaxRows => "softmax_rows",
            Primitive::LayerNormRows => "layer_norm_rows",
            Primitive::MaxPoolRows => "maxpool_rows",
            Primitive::MeanRows => "mean_rows",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Slice => "slice",
            Primitive::SliceCols => "slice_cols",
            Primitive::ConcatCols => "concat_cols",
            Primitive::StackRows => "stack_rows",
            Primitive::GatherRows => "gather_rows",
            Primitive::SegmentMean => "segment_mean",
            Primitive::Cosine => "cosine",
            Primitive::BinaryCrossEntropy => "bce",
            Primitive::Threshold => "threshold",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ALL_PRIMITIVES.iter().copied().find(|p| p.name() == name)
    }
}

pub const ALL_PRIMITIVES: [Primitive; 30] = [
    Primitive::Leaf,
    Primitive::MatMul,
    Primitive::Transpose,
    Primitive::Add,
    Primitive::Sub,
    Primitive::Mul,
    Primitive::AddRowVector,
    Primitive::MulRowVector,
    Primitive::ScaleRows,
    Primitive::ScaleBy,
    Primitive::Affine,
    Primitive::Sigmoid,
    Primitive::Selu,
    Primitive::Relu,
    Primitive::Abs,
    Primitive::SoftmaxRows,
    Primitive::LayerNormRows,
    Primitive::MaxPoolRows,
    Primitive::MeanRows,
    Primitive::Sum,
    Primitive::Mean,
    Primitive::Slice,
    Primitive::SliceCols,
    Primitive::ConcatCols,
    Primitive::StackRows,
    Primitive::GatherRows,
    Primitive::SegmentMean,
    Primitive::Cosine,
    Primitive::BinaryCrossEntropy,
    Primitive::Threshold,
];

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowVector(Var, Var),
    MulRowVector(Var, Var),
    ScaleRows(Var, Var),
    ScaleBy(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Selu(Var),
    Relu(Var),
    Abs(Var),
    SoftmaxRows(Var),
    LayerNormRows { input: Var, inv_std: Vec<f64> },
    MaxPoolRows(Var),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    Slice { input: Var, start: usize },
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    GatherRows { table: Var, ids: Vec<usize> },
    SegmentMean { table: Var, segments: Vec<Vec<usize>> },
    Cosine(Var, Var),
    BinaryCrossEntropy { probs: Var, targets: Vec<f64> },
    Threshold(Var),
}

impl Op {
    fn primitive(&self) -> Primitive {
        match self {
            Op::Leaf => Primitive::Leaf,
            Op::MatMul(..) => Primitive::MatMul,
            Op::Transpose(..) => Primitive::Transpose,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::AddRowVector(..) => Primitive::AddRowVector,
            Op::MulRowVector(..) => Primitive::MulRowVector,
            Op::ScaleRows(..) => Primitive::ScaleRows,
            Op::ScaleBy(..) => Primitive::ScaleBy,
            Op::Affine(..) => Primitive::Affine,
            Op::Sigmoid(..) => Primitive::Sigmoid,
            Op::Selu(..) => Primitive::Selu,
            Op::Relu(..) => Primitive::Relu,
            Op::Abs(..) => Primitive::Abs,
            Op::SoftmaxRows(..) => Primitive::SoftmaxRows,
            Op::LayerNormRows { .. } => Primitive::LayerNormRows,
            Op::MaxPoolRows(..) => Primitive::MaxPoolRows,
            Op::MeanRows(..) => Primitive::MeanRows,
            Op::Sum(..) => Primitive::Sum,
            Op::Mean(..) => Primitive::Mean,
            Op::Slice { .. } => Primitive::Slice,
            Op::SliceCols { .. } => Primitive::SliceCols,
            Op::ConcatCols(..) => Primitive::ConcatCols,
            Op::StackRows(..) => Primitive::StackRows,
            Op::GatherRows { .. } => Primitive::GatherRows,
            Op::SegmentMean { .. } => Primitive::SegmentMean,
            Op::Cosine(..) => Primitive::Cosine,
            Op::BinaryCrossEntropy { .. } => Primitive::BinaryCrossEntropy,
            Op::Threshold(..) => Primitive::Threshold,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// How [`Tape::threshold`] behaves in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// Binarize: `z_i = 1` iff `a_i > threshold`.
    #[default]
    Hard,
    /// Replace thresholding by the identity. Used to finite-difference the
    /// soft surrogate whose Jacobian the straight-through rule reports.
    Surrogate,
}

/// Operation record for one reverse-mode pass.
///
/// A tape is confined to a single thread; independent tapes share nothing.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    threshold_mode: ThresholdMode,
    fault: Option<Primitive>,
}

fn shape_err(op: Primitive, left: &[usize], right: &[usize]) -> AutodiffError {
    AutodiffError::Shape {
        op: op.name(),
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_threshold_mode(mode: ThresholdMode) -> Self {
        Self {
            threshold_mode: mode,
            ..Self::default()
        }
    }

    pub fn threshold_mode(&self) -> ThresholdMode {
        self.threshold_mode
    }

    /// Scales the backward rule of `primitive` by 1.5. Only useful as a
    /// negative control for gradient checking.
    pub fn inject_fault(&mut self, primitive: Primitive) {
        self.fault = Some(primitive);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Accumulated gradient, or `None` if no backward pass reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn same_shape(&self, p: Primitive, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(p, sa, sb));
        }
        Ok(())
    }

    fn zip(&mut self, p: Primitive, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, AutodiffError> {
        self.same_shape(p, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    fn require_matrix(&self, p: Primitive, v: Var) -> Result<(usize, usize), AutodiffError> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(AutodiffError::Rank {
                op: p.name(),
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    // ----- linear algebra -----

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let p = Primitive::MatMul;
        let (m, k) = self.require_matrix(p, a)?;
        let (k2, n) = self.require_matrix(p, b)?;
        if k != k2 {
            return Err(shape_err(p, self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.require_matrix(Primitive::Transpose, a)?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(n, m, out), Op::Transpose(a), rg))
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip(Primitive::Add, a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip(Primitive::Sub, a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip(Primitive::Mul, a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds the vector `v` (length n) to every row of the `[m, n]` matrix.
    pub fn add_row_vector(&mut self, a: Var, v: Var) -> Result<Var, AutodiffError> {
        let p = Primitive::AddRowVector;
        let (m, n) = self.require_matrix(p, a)?;
        if self.value(v).len() != n {
            return Err(shape_err(p, self.shape(a), self.shape(v)));
        }
        let (src, row) = (self.value(a).data(), self.value(v).data());
        let mut out = src.to_vec();
        for r in 0..m {
            for (o, &b) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(Tensor::matrix(m, n, out), Op::AddRowVector(a, v), rg))
    }

    /// Multiplies every row of the `[m, n]` matrix elementwise by `v` (length n).
    pub fn mul_row_vector(&mut self, a: Var, v: Var) -> Result<Var, AutodiffError> {
        let p = Primitive::MulRowVector;
        let (m, n) = self.require_matrix(p, a)?;
        if self.value(v).len() != n {
            return Err(shape_err(p, self.shape(a), self.shape(v)));
        }
        let (src, row) = (self.value(a).data(), self.value(v).data());
        let mut out = src.to_vec();
        for r in 0..m {
            for (o, &b) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o *= b;
            }
        }
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MulRowVector(a, v), rg))
    }

    /// Row `i` of the `[m, n]` matrix times `s_i`, for `s` of length m.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let p = Primitive::ScaleRows;
        let (m, n) = self.require_matrix(p, a)?;
        if self.value(s).len() != m {
            return Err(shape_err(p, self.shape(a), self.shape(s)));
        }
        let (src, sc) = (self.value(a).data(), self.value(s).data());
        let mut out = src.to_vec();
        for r in 0..m {
            for o in &mut out[r * n..(r + 1) * n] {
                *o *= sc[r];
            }
        }
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(Tensor::matrix(m, n, out), Op::ScaleRows(a, s), rg))
    }

    /// Product of a one-element tensor `s` with an arbitrary tensor.
    pub fn scale_by(&mut self, s: Var, a: Var) -> Result<Var, AutodiffError> {
        let p = Primitive::ScaleBy;
        if self.value(s).len() != 1 {
            return Err(shape_err(p, self.shape(s), self.shape(a)));
        }
        let k = self.scalar(s);
        let src = self.value(a);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v * k).collect())?;
        let rg = self.rg(s) || self.rg(a);
        Ok(self.push(value, Op::ScaleBy(s, a), rg))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn selu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Selu(x), selu)
    }

    /// Hinge `max(x, 0)`.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    // ----- row-wise -----

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.require_matrix(Primitive::SoftmaxRows, x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            for o in &mut out[r * n..(r + 1) * n] {
                *o /= total;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, n, out), Op::SoftmaxRows(x), rg))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.require_matrix(Primitive::LayerNormRows, x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, n, out), Op::LayerNormRows { input: x, inv_std }, rg))
    }

    /// Column-wise maximum over the rows of an `[m, n]` matrix, giving `[n]`.
    /// The gradient of a column is split evenly among the rows that attain
    /// its maximum.
    pub fn maxpool_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.require_matrix(Primitive::MaxPoolRows, x)?;
        if m == 0 {
            return Err(AutodiffError::Empty { op: Primitive::MaxPoolRows.name() });
        }
        let src = self.value(x).data();
        let mut out = src[..n].to_vec();
        for r in 1..m {
            for (o, &v) in out.iter_mut().zip(&src[r * n..(r + 1) * n]) {
                *o = o.max(v);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::MaxPoolRows(x), rg))
    }

    /// Column-wise mean over the rows of an `[m, n]` matrix, giving `[n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.require_matrix(Primitive::MeanRows, x)?;
        if m == 0 {
            return Err(AutodiffError::Empty { op: Primitive::MeanRows.name() });
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, &v) in out.iter_mut().zip(&src[r * n..(r + 1) * n]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::MeanRows(x), rg))
    }

    // ----- reductions -----

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    // ----- structural -----

    /// Contiguous run `[start, start + len)` of the flat buffer, as a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if start + len > t.len() || len == 0 {
            return Err(AutodiffError::Index {
                op: Primitive::Slice.name(),
                index: start + len,
                bound: t.len(),
            });
        }
        let value = Tensor::vector(t.data()[start..start + len].to_vec());
        let rg = self.rg(x);
        Ok(self.push(value, Op::Slice { input: x, start }, rg))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let (m, n) = self.require_matrix(Primitive::SliceCols, x)?;
        if start >= end || end > n {
            return Err(AutodiffError::Index {
                op: Primitive::SliceCols.name(),
                index: end,
                bound: n,
            });
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, w, out), Op::SliceCols { input: x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let p = Primitive::ConcatCols;
        let first = *parts.first().ok_or(AutodiffError::Empty { op: p.name() })?;
        let (m, _) = self.require_matrix(p, first)?;
        let mut total = 0;
        for &part in parts {
            let (pm, pn) = self.require_matrix(p, part)?;
            if pm != m {
                return Err(shape_err(p, self.shape(first), self.shape(part)));
            }
            total += pn;
        }
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &part in parts {
                out.extend_from_slice(self.value(part).row(r));
            }
        }
        let rg = parts.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::matrix(m, total, out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, AutodiffError> {
        let p = Primitive::StackRows;
        let first = *rows.first().ok_or(AutodiffError::Empty { op: p.name() })?;
        let n = self.value(first).len();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if self.value(r).len() != n {
                return Err(shape_err(p, self.shape(first), self.shape(r)));
            }
            out.extend_from_slice(self.value(r).data());
        }
        let rg = rows.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::matrix(rows.len(), n, out), Op::StackRows(rows.to_vec()), rg))
    }

    /// Selects rows of a `[v, d]` table by index, giving `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let p = Primitive::GatherRows;
        let (v, d) = self.require_matrix(p, table)?;
        if ids.is_empty() {
            return Err(AutodiffError::Empty { op: p.name() });
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(AutodiffError::Index { op: p.name(), index: id, bound: v });
            }
            out.extend_from_slice(src.row(id));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), d, out),
            Op::GatherRows { table, ids: ids.to_vec() },
            rg,
        ))
    }

    /// Mean of table rows per segment: row `s` of the output is the mean
    /// of `table[i]` over `i in segments[s]`.
    pub fn segment_mean(&mut self, table: Var, segments: &[Vec<usize>]) -> Result<Var, AutodiffError> {
        let p = Primitive::SegmentMean;
        let (v, d) = self.require_matrix(p, table)?;
        if segments.is_empty() || segments.iter().any(Vec::is_empty) {
            return Err(AutodiffError::Empty { op: p.name() });
        }
        let src = self.value(table);
        let mut out = vec![0.0; segments.len() * d];
        for (s, ids) in segments.iter().enumerate() {
            let dst = &mut out[s * d..(s + 1) * d];
            for &id in ids {
                if id >= v {
                    return Err(AutodiffError::Index { op: p.name(), index: id, bound: v });
                }
                for (o, &x) in dst.iter_mut().zip(src.row(id)) {
                    *o += x;
                }
            }
            let k = ids.len() as f64;
            for o in dst.iter_mut() {
                *o /= k;
            }
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::matrix(segments.len(), d, out),
            Op::SegmentMean { table, segments: segments.to_vec() },
            rg,
        ))
    }

    // ----- losses -----

    /// Cosine similarity of two equal-length tensors; 0 when either has zero norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(Primitive::Cosine, a, b)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let c = cosine_raw(va, vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b), rg))
    }

    /// Summed binary cross-entropy of probabilities against fixed targets.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: &[f64]) -> Result<Var, AutodiffError> {
        let p = Primitive::BinaryCrossEntropy;
        let src = self.value(probs).data();
        if src.len() != targets.len() {
            return Err(shape_err(p, self.shape(probs), &[targets.len()]));
        }
        let loss = src
            .iter()
            .zip(targets)
            .map(|(&q, &y)| {
                let q = q.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum();
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BinaryCrossEntropy { probs, targets: targets.to_vec() },
            rg,
        ))
    }

    /// Straight-through threshold: forward gives `1` where `a_i > threshold`
    /// and `0` elsewhere; backward passes the incoming gradient unchanged.
    pub fn threshold(&mut self, a: Var, threshold: f64) -> Result<Var, AutodiffError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(AutodiffError::Domain {
                op: Primitive::Threshold.name(),
                detail: format!("threshold {threshold} outside (0, 1)"),
            });
        }
        let src = self.value(a);
        if let Some(bad) = src.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(AutodiffError::Domain {
                op: Primitive::Threshold.name(),
                detail: format!("entry {bad} outside [0, 1]"),
            });
        }
        let data = match self.threshold_mode {
            ThresholdMode::Hard => src
                .data()
                .iter()
                .map(|&v| if v > threshold { 1.0 } else { 0.0 })
                .collect(),
            ThresholdMode::Surrogate => src.data().to_vec(),
        };
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Threshold(a), rg))
    }

    // ----- backward -----

    /// Accumulates d(loss)/d(v) into every tensor `v` the loss depends on.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: shape.to_vec() });
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(mut g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if self.fault == Some(node.op.primitive()) {
                for v in &mut g {
                    *v *= 1.5;
                }
            }
            self.backprop_node(idx, &g, &mut adj);
            // keep the adjoint for reporting
            if self.grads.len() <= idx {
                self.grads.resize_with(idx + 1, || None);
            }
            match &mut self.grads[idx] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let rg = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                if rg(*a) {
                    // dA = G B^T
                    let bv = val(*b);
                    acc(*a, &mut |da| {
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bv[p * n + j];
                                }
                                da[i * k + p] += s;
                            }
                        }
                    });
                }
                if rg(*b) {
                    // dB = A^T G
                    let av = val(*a);
                    acc(*b, &mut |db| {
                        for i in 0..m {
                            for p in 0..k {
                                let x = av[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += x * g[i * n + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                acc(*a, &mut |da| {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddRowVector(a, v) => {
                let n = nodes[v.0].value.len();
                acc(*a, &mut |d| add_into(d, g));
                acc(*v, &mut |d| {
                    for (i, &x) in g.iter().enumerate() {
                        d[i % n] += x;
                    }
                });
            }
            Op::MulRowVector(a, v) => {
                let n = nodes[v.0].value.len();
                let (av, vv) = (val(*a), val(*v));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vv[i % n];
                    }
                });
                acc(*v, &mut |d| {
                    for (i, &x) in g.iter().enumerate() {
                        d[i % n] += x * av[i];
                    }
                });
            }
            Op::ScaleRows(a, s) => {
                let n = nodes[a.0].value.cols();
                let (av, sv) = (val(*a), val(*s));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * sv[i / n];
                    }
                });
                acc(*s, &mut |d| {
                    for (i, &x) in g.iter().enumerate() {
                        d[i / n] += x * av[i];
                    }
                });
            }
            Op::ScaleBy(s, a) => {
                let k = val(*s)[0];
                let av = val(*a);
                acc(*s, &mut |d| d[0] += g.iter().zip(av).map(|(x, y)| x * y).sum::<f64>());
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += k * y));
            }
            Op::Affine(a, scale) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += scale * y));
            }
            Op::Sigmoid(a) => {
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                });
            }
            Op::Selu(a) => {
                let av = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        let slope = if av[i] > 0.0 {
                            SELU_LAMBDA
                        } else {
                            out[i] + SELU_LAMBDA * SELU_ALPHA
                        };
                        d[i] += g[i] * slope;
                    }
                });
            }
            Op::Relu(a) => {
                let av = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if av[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Abs(a) => {
                let av = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * sign(av[i]);
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = node.value.cols();
                acc(*a, &mut |d| {
                    for (r, (grow, yrow)) in g.chunks(n).zip(out.chunks(n)).enumerate() {
                        let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for j in 0..n {
                            d[r * n + j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNormRows { input, inv_std } => {
                let n = node.value.cols();
                acc(*input, &mut |d| {
                    for (r, (grow, yrow)) in g.chunks(n).zip(out.chunks(n)).enumerate() {
                        let mean_g = grow.iter().sum::<f64>() / n as f64;
                        let mean_gy = grow.iter().zip(yrow).map(|(x, y)| x * y).sum::<f64>() / n as f64;
                        for j in 0..n {
                            d[r * n + j] += inv_std[r] * (grow[j] - mean_g - yrow[j] * mean_gy);
                        }
                    }
                });
            }
            Op::MaxPoolRows(a) => {
                let src = val(*a);
                let n = out.len();
                let m = src.len() / n;
                acc(*a, &mut |d| {
                    for j in 0..n {
                        let ties = (0..m).filter(|&r| src[r * n + j] == out[j]).count();
                        let share = g[j] / ties as f64;
                        for r in 0..m {
                            if src[r * n + j] == out[j] {
                                d[r * n + j] += share;
                            }
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let m = nodes[a.0].value.rows();
                let n = g.len();
                acc(*a, &mut |d| {
                    for (i, x) in d.iter_mut().enumerate() {
                        *x += g[i % n] / m as f64;
                    }
                });
            }
            Op::Sum(a) => {
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Mean(a) => {
                let k = g[0] / nodes[a.0].value.len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += k));
            }
            Op::Slice { input, start } => {
                acc(*input, &mut |d| add_into(&mut d[*start..*start + g.len()], g));
            }
            Op::SliceCols { input, start } => {
                let n = nodes[input.0].value.cols();
                let w = node.value.cols();
                acc(*input, &mut |d| {
                    for (r, grow) in g.chunks(w).enumerate() {
                        add_into(&mut d[r * n + start..r * n + start + w], grow);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &part in parts {
                    let w = nodes[part.0].value.cols();
                    acc(part, &mut |d| {
                        for (r, grow) in g.chunks(total).enumerate() {
                            add_into(&mut d[r * w..(r + 1) * w], &grow[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::StackRows(rows) => {
                let n = node.value.cols();
                for (r, &row) in rows.iter().enumerate() {
                    acc(row, &mut |d| add_into(d, &g[r * n..(r + 1) * n]));
                }
            }
            Op::GatherRows { table, ids } => {
                let d_cols = node.value.cols();
                acc(*table, &mut |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * d_cols..(id + 1) * d_cols], &g[r * d_cols..(r + 1) * d_cols]);
                    }
                });
            }
            Op::SegmentMean { table, segments } => {
                let d_cols = node.value.cols();
                acc(*table, &mut |d| {
                    for (s, ids) in segments.iter().enumerate() {
                        let k = 1.0 / ids.len() as f64;
                        let grow = &g[s * d_cols..(s + 1) * d_cols];
                        for &id in ids {
                            for (x, &y) in d[id * d_cols..(id + 1) * d_cols].iter_mut().zip(grow) {
                                *x += k * y;
                            }
                        }
                    }
                });
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    return;
                }
                let c = out[0];
                let gs = g[0];
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += gs * (bv[i] / (na * nb) - c * av[i] / (na * na));
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += gs * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
                    }
                });
            }
            Op::BinaryCrossEntropy { probs, targets } => {
                let pv = val(*probs);
                acc(*probs, &mut |d| {
                    for i in 0..d.len() {
                        let q = pv[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                        let y = targets[i];
                        d[i] += g[0] * (-y / q + (1.0 - y) / (1.0 - q));
                    }
                });
            }
            Op::Threshold(a) => {
                acc(*a, &mut |d| add_into(d, g));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &y) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    out
}

/// Cosine similarity with the zero-norm convention `cos = 0`.
pub fn cosine_raw(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let y = t.sigmoid(x);
        assert_eq!(t.scalar(y), 0.5);
    }

    #[test]
    fn maxpool_pools_rows() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]));
        let y = t.maxpool_rows(x).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn cosine_of_orthogonal_is_zero() {
        let mut t = Tape::new();
        let a = t.param(Tensor::vector(vec![1.0, 0.0]));
        let b = t.param(Tensor::vector(vec![0.0, 1.0]));
        let c = t.cosine(a, b).unwrap();
        assert_eq!(t.scalar(c), 0.0);
    }

    #[test]
    fn threshold_is_strict() {
        let mut t = Tape::new();
        let a = t.param(Tensor::vector(vec![0.6, 0.4, 0.5]));
        let z = t.threshold(a, 0.5).unwrap();
        assert_eq!(t.value(z).data(), &[1.0, 0.0, 0.0]);

        let b = t.param(Tensor::vector(vec![1.0, 1.0]));
        let z = t.threshold(b, 0.5).unwrap();
        assert_eq!(t.value(z).data(), &[1.0, 1.0]);
    }

    #[test]
    fn threshold_passes_gradient_through() {
        let mut t = Tape::new();
        let a = t.param(Tensor::vector(vec![0.7, 0.2]));
        let z = t.threshold(a, 0.5).unwrap();
        let w = t.constant(Tensor::vector(vec![0.3, -0.2]));
        let prod = t.mul(z, w).unwrap();
        let loss = t.sum(prod);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[0.3, -0.2]);
    }

    #[test]
    fn threshold_rejects_out_of_range() {
        let mut t = Tape::new();
        let a = t.param(Tensor::vector(vec![1.2]));
        assert!(matches!(t.threshold(a, 0.5), Err(AutodiffError::Domain { .. })));
        let b = t.param(Tensor::vector(vec![0.2]));
        assert!(t.threshold(b, 1.0).is_err());
    }

    #[test]
    fn sum_and_mean_gradients() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let m = t.mean(x);
        t.backward(m).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn chain_rule_through_sigmoid() {
        let mut t = Tape::new();
        let w = t.param(Tensor::scalar(0.0));
        let s = t.sigmoid(w);
        let y = t.affine(s, 2.0, 0.0);
        t.backward(y).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[0.5]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 2.0]);
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(AutodiffError::NonScalarLoss { .. })));
    }

    #[test]
    fn shape_mismatch_names_primitive_and_shapes() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros(&[2, 3]));
        let b = t.param(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = t.param(Tensor::zeros(&[3]));
        assert!(t.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn selu_negative_branch() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![-0.7, 0.0, 2.0]));
        let y = t.selu(x);
        let v = t.value(y).data();
        assert!((v[0] - SELU_LAMBDA * SELU_ALPHA * ((-0.7f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 2.0 * SELU_LAMBDA).abs() < 1e-15);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let c = t.constant(Tensor::vector(vec![3.0, 4.0]));
        let p = t.mul(x, c).unwrap();
        let s = t.sum(p);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(t.grad(c).is_none());
    }

    #[test]
    fn primitive_names_round_trip() {
        for p in ALL_PRIMITIVES {
            assert_eq!(Primitive::from_name(p.name()), Some(p));
        }
    }
}
