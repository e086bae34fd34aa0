//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are 1-D or 2-D, row-major. Every primitive records its parents on
//! an implicit tape (the operation graph) whenever any operand requires
//! gradients and grad mode is on; [`backward`] replays the graph once in
//! reverse topological order, accumulating gradients into leaf tensors.
//! After a backward pass the visited graph is consumed and cannot be
//! replayed.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::NnError;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on this thread.
///
/// Used for rollouts and evaluation, where forward values are needed but no
/// tape should be built.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Graph already backpropagated; parents released.
    Consumed,
    Matmul,
    Transpose,
    Bmm { batch: usize },
    BmmNT { batch: usize },
    Add,
    AddRow,
    Sub,
    Mul,
    MulCol,
    MulRow,
    Neg,
    Scale(f64),
    AddScalar,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Gelu,
    Softplus,
    SoftmaxRows,
    LayerNormRows { eps: f64 },
    MeanRowsGrouped { group: usize },
    SumAll,
    MeanAll,
    SumCols,
    ConcatCols { widths: Vec<usize> },
    SliceCols { start: usize, len: usize },
    GatherRows { indices: Vec<usize> },
    ScatterAddRows { indices: Vec<usize>, total_rows: usize },
    TileRows { times: usize },
    RepeatRowsEach { times: usize },
    Clamp { lo: f64, hi: f64 },
    Minimum,
    Maximum,
    WhereMask { mask: Vec<bool> },
    Reshape,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
    parents: Vec<Tensor>,
}

/// A shared handle to a tensor node. Cloning is cheap (reference count).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            inner.shape, inner.requires_grad
        )
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Rows/cols view: 1-D tensors are treated as a single row.
fn as_2d(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => panic!("tensors are 1-D or 2-D"),
    }
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op, parents: Vec<Tensor>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad,
                op,
                parents,
            })),
        }
    }

    /// Constant leaf (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(numel(shape), data.len(), "data length must match shape");
        Tensor::new(shape.to_vec(), data, false, Op::Leaf, vec![])
    }

    /// Leaf that accumulates gradients (a parameter or traced input).
    pub fn param(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(numel(shape), data.len(), "data length must match shape");
        Tensor::new(shape.to_vec(), data, true, Op::Leaf, vec![])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(shape, vec![0.0; numel(shape)])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(&[1], vec![v])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rows(&self) -> usize {
        as_2d(&self.inner.borrow().shape).0
    }

    pub fn cols(&self) -> usize {
        as_2d(&self.inner.borrow().shape).1
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() requires a single-element tensor");
        inner.data[0]
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrites the stored value in place (optimizer updates).
    pub fn set_data(&self, data: Vec<f64>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data = data;
    }

    fn ptr(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    fn unary(&self, op: Op, data: Vec<f64>, shape: Vec<usize>) -> Tensor {
        let rg = self.requires_grad() && grad_enabled();
        let parents = if rg { vec![self.clone()] } else { vec![] };
        Tensor::new(shape, data, rg, if rg { op } else { Op::Leaf }, parents)
    }

    fn binary(&self, other: &Tensor, op: Op, data: Vec<f64>, shape: Vec<usize>) -> Tensor {
        let rg = (self.requires_grad() || other.requires_grad()) && grad_enabled();
        let parents = if rg { vec![self.clone(), other.clone()] } else { vec![] };
        Tensor::new(shape, data, rg, if rg { op } else { Op::Leaf }, parents)
    }

    fn shape_err(&self, op: &str, other: Option<&Tensor>) -> NnError {
        NnError::ShapeMismatch {
            op: op.to_string(),
            lhs: format!("{:?}", self.shape()),
            rhs: other.map(|t| format!("{:?}", t.shape())).unwrap_or_default(),
        }
    }

    // ---- linear algebra ----

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NnError> {
        let (m, k) = as_2d(&self.inner.borrow().shape);
        let (k2, n) = as_2d(&other.inner.borrow().shape);
        if k != k2 {
            return Err(self.shape_err("matmul", Some(other)));
        }
        let a = self.inner.borrow();
        let b = other.inner.borrow();
        let mut out = vec![0.0; m * n];
        mm_acc(&a.data, &b.data, m, k, n, &mut out);
        drop((a, b));
        Ok(self.binary(other, Op::Matmul, out, vec![m, n]))
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        let a = &self.inner.borrow().data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a[i * n + j];
            }
        }
        self.unary(Op::Transpose, out, vec![n, m])
    }

    /// Block-diagonal matmul: `self` is `batch` stacked (n×k) blocks,
    /// `other` is `batch` stacked (k×m) blocks; output stacks (n×m) blocks.
    pub fn bmm(&self, other: &Tensor, batch: usize) -> Result<Tensor, NnError> {
        let (rows_a, k) = as_2d(&self.inner.borrow().shape);
        let (rows_b, m) = as_2d(&other.inner.borrow().shape);
        if batch == 0 || rows_a % batch != 0 || rows_b % batch != 0 || rows_b / batch != k {
            return Err(self.shape_err("bmm", Some(other)));
        }
        let n = rows_a / batch;
        let a = self.inner.borrow();
        let b = other.inner.borrow();
        let mut out = vec![0.0; rows_a * m];
        for i in 0..batch {
            mm_acc(
                &a.data[i * n * k..(i + 1) * n * k],
                &b.data[i * k * m..(i + 1) * k * m],
                n,
                k,
                m,
                &mut out[i * n * m..(i + 1) * n * m],
            );
        }
        drop((a, b));
        Ok(self.binary(other, Op::Bmm { batch }, out, vec![rows_a, m]))
    }

    /// Block-diagonal A·Bᵀ: blocks (n×k)·(m×k)ᵀ → (n×m).
    pub fn bmm_nt(&self, other: &Tensor, batch: usize) -> Result<Tensor, NnError> {
        let (rows_a, k) = as_2d(&self.inner.borrow().shape);
        let (rows_b, k2) = as_2d(&other.inner.borrow().shape);
        if batch == 0 || rows_a % batch != 0 || rows_b % batch != 0 || k != k2 {
            return Err(self.shape_err("bmm_nt", Some(other)));
        }
        let n = rows_a / batch;
        let m = rows_b / batch;
        let a = self.inner.borrow();
        let b = other.inner.borrow();
        let mut out = vec![0.0; rows_a * m];
        for i in 0..batch {
            mm_nt_acc(
                &a.data[i * n * k..(i + 1) * n * k],
                &b.data[i * m * k..(i + 1) * m * k],
                n,
                k,
                m,
                &mut out[i * n * m..(i + 1) * n * m],
            );
        }
        drop((a, b));
        Ok(self.binary(other, Op::BmmNT { batch }, out, vec![rows_a, m]))
    }

    // ---- elementwise and broadcasting ----

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NnError> {
        if self.shape() != other.shape() {
            return Err(self.shape_err("add", Some(other)));
        }
        let data = zip_map(&self.inner.borrow().data, &other.inner.borrow().data, |a, b| a + b);
        Ok(self.binary(other, Op::Add, data, self.shape()))
    }

    /// Adds a 1-D row vector to every row of a 2-D tensor.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor, NnError> {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        if row.shape() != vec![n] {
            return Err(self.shape_err("add_row", Some(row)));
        }
        let a = self.inner.borrow();
        let r = row.inner.borrow();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(a.data[i * n + j] + r.data[j]);
            }
        }
        drop((a, r));
        Ok(self.binary(row, Op::AddRow, out, self.shape()))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, NnError> {
        if self.shape() != other.shape() {
            return Err(self.shape_err("sub", Some(other)));
        }
        let data = zip_map(&self.inner.borrow().data, &other.inner.borrow().data, |a, b| a - b);
        Ok(self.binary(other, Op::Sub, data, self.shape()))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, NnError> {
        if self.shape() != other.shape() {
            return Err(self.shape_err("mul", Some(other)));
        }
        let data = zip_map(&self.inner.borrow().data, &other.inner.borrow().data, |a, b| a * b);
        Ok(self.binary(other, Op::Mul, data, self.shape()))
    }

    /// Multiplies every row of a 2-D tensor elementwise by a 1-D row vector.
    pub fn mul_row(&self, row: &Tensor) -> Result<Tensor, NnError> {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        if row.shape() != vec![n] {
            return Err(self.shape_err("mul_row", Some(row)));
        }
        let a = self.inner.borrow();
        let r = row.inner.borrow();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(a.data[i * n + j] * r.data[j]);
            }
        }
        drop((a, r));
        Ok(self.binary(row, Op::MulRow, out, self.shape()))
    }

    /// Multiplies every row i of a 2-D tensor by `col[i]`.
    pub fn mul_col(&self, col: &Tensor) -> Result<Tensor, NnError> {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        if col.shape() != vec![m] {
            return Err(self.shape_err("mul_col", Some(col)));
        }
        let a = self.inner.borrow();
        let c = col.inner.borrow();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(a.data[i * n + j] * c.data[i]);
            }
        }
        drop((a, c));
        Ok(self.binary(col, Op::MulCol, out, self.shape()))
    }

    pub fn neg(&self) -> Tensor {
        let data = self.inner.borrow().data.iter().map(|v| -v).collect();
        self.unary(Op::Neg, data, self.shape())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let data = self.inner.borrow().data.iter().map(|v| v * s).collect();
        self.unary(Op::Scale(s), data, self.shape())
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data = self.inner.borrow().data.iter().map(|v| v + s).collect();
        self.unary(Op::AddScalar, data, self.shape())
    }

    pub fn exp(&self) -> Tensor {
        let data = self.inner.borrow().data.iter().map(|v| v.exp()).collect();
        self.unary(Op::Exp, data, self.shape())
    }

    pub fn log(&self) -> Tensor {
        let data = self.inner.borrow().data.iter().map(|v| v.ln()).collect();
        self.unary(Op::Log, data, self.shape())
    }

    pub fn tanh(&self) -> Tensor {
        let data = self.inner.borrow().data.iter().map(|v| v.tanh()).collect();
        self.unary(Op::Tanh, data, self.shape())
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self.inner.borrow().data.iter().map(|v| sigmoid(*v)).collect();
        self.unary(Op::Sigmoid, data, self.shape())
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&self) -> Tensor {
        let data = self.inner.borrow().data.iter().map(|v| gelu(*v)).collect();
        self.unary(Op::Gelu, data, self.shape())
    }

    pub fn softplus(&self) -> Tensor {
        let data = self.inner.borrow().data.iter().map(|v| softplus(*v)).collect();
        self.unary(Op::Softplus, data, self.shape())
    }

    // ---- row-structured ops ----

    /// Softmax over each row (a 1-D tensor is one row).
    pub fn softmax_rows(&self) -> Tensor {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        let a = self.inner.borrow();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &a.data[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        drop(a);
        self.unary(Op::SoftmaxRows, out, self.shape())
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layernorm_rows(&self, eps: f64) -> Tensor {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        let a = self.inner.borrow();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &a.data[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * inv;
            }
        }
        drop(a);
        self.unary(Op::LayerNormRows { eps }, out, self.shape())
    }

    /// Means over every consecutive group of `group` rows: (g·n × d) → (g × d).
    pub fn mean_rows_grouped(&self, group: usize) -> Result<Tensor, NnError> {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        if group == 0 || m % group != 0 {
            return Err(self.shape_err("mean_rows_grouped", None));
        }
        let blocks = m / group;
        let a = self.inner.borrow();
        let mut out = vec![0.0; blocks * n];
        for b in 0..blocks {
            for i in 0..group {
                for j in 0..n {
                    out[b * n + j] += a.data[(b * group + i) * n + j];
                }
            }
            for j in 0..n {
                out[b * n + j] /= group as f64;
            }
        }
        drop(a);
        Ok(self.unary(Op::MeanRowsGrouped { group }, out, vec![blocks, n]))
    }

    pub fn sum_all(&self) -> Tensor {
        let s = self.inner.borrow().data.iter().sum();
        self.unary(Op::SumAll, vec![s], vec![1])
    }

    pub fn mean_all(&self) -> Tensor {
        let inner = self.inner.borrow();
        let s = inner.data.iter().sum::<f64>() / inner.data.len() as f64;
        drop(inner);
        self.unary(Op::MeanAll, vec![s], vec![1])
    }

    /// Sums each row of a 2-D tensor into a 1-D vector of length rows.
    pub fn sum_cols(&self) -> Tensor {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        let a = self.inner.borrow();
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = a.data[i * n..(i + 1) * n].iter().sum();
        }
        drop(a);
        self.unary(Op::SumCols, out, vec![m])
    }

    // ---- structural ops ----

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor, NnError> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let m = as_2d(&parts[0].inner.borrow().shape).0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = as_2d(&p.inner.borrow().shape);
            if pm != m {
                return Err(parts[0].shape_err("concat_cols", Some(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let d = p.inner.borrow();
            for i in 0..m {
                out[i * total + off..i * total + off + w].copy_from_slice(&d.data[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|p| p.requires_grad()) && grad_enabled();
        let parents = if rg { parts.to_vec() } else { vec![] };
        Ok(Tensor::new(
            vec![m, total],
            out,
            rg,
            if rg { Op::ConcatCols { widths } } else { Op::Leaf },
            parents,
        ))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor, NnError> {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        if start + len > n {
            return Err(self.shape_err("slice_cols", None));
        }
        let a = self.inner.borrow();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&a.data[i * n + start..i * n + start + len]);
        }
        drop(a);
        Ok(self.unary(Op::SliceCols { start, len }, out, vec![m, len]))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor, NnError> {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        if indices.iter().any(|&i| i >= m) {
            return Err(self.shape_err("gather_rows", None));
        }
        let a = self.inner.borrow();
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(&a.data[i * n..(i + 1) * n]);
        }
        drop(a);
        Ok(self.unary(
            Op::GatherRows { indices: indices.to_vec() },
            out,
            vec![indices.len(), n],
        ))
    }

    /// Scatter-adds rows of `self` into a zero (total_rows × cols) tensor at
    /// the given row indices.
    pub fn scatter_add_rows(&self, indices: &[usize], total_rows: usize) -> Result<Tensor, NnError> {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        if indices.len() != m || indices.iter().any(|&i| i >= total_rows) {
            return Err(self.shape_err("scatter_add_rows", None));
        }
        let a = self.inner.borrow();
        let mut out = vec![0.0; total_rows * n];
        for (r, &i) in indices.iter().enumerate() {
            for j in 0..n {
                out[i * n + j] += a.data[r * n + j];
            }
        }
        drop(a);
        Ok(self.unary(
            Op::ScatterAddRows { indices: indices.to_vec(), total_rows },
            out,
            vec![total_rows, n],
        ))
    }

    /// Stacks `times` copies of the whole tensor along rows.
    pub fn tile_rows(&self, times: usize) -> Tensor {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        let a = self.inner.borrow();
        let mut out = Vec::with_capacity(times * m * n);
        for _ in 0..times {
            out.extend_from_slice(&a.data);
        }
        drop(a);
        self.unary(Op::TileRows { times }, out, vec![times * m, n])
    }

    /// Repeats each row `times` times consecutively.
    pub fn repeat_rows_each(&self, times: usize) -> Tensor {
        let (m, n) = as_2d(&self.inner.borrow().shape);
        let a = self.inner.borrow();
        let mut out = Vec::with_capacity(times * m * n);
        for i in 0..m {
            for _ in 0..times {
                out.extend_from_slice(&a.data[i * n..(i + 1) * n]);
            }
        }
        drop(a);
        self.unary(Op::RepeatRowsEach { times }, out, vec![times * m, n])
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let data = self.inner.borrow().data.iter().map(|v| v.clamp(lo, hi)).collect();
        self.unary(Op::Clamp { lo, hi }, data, self.shape())
    }

    /// Elementwise minimum; on ties the gradient routes to `self`.
    pub fn minimum(&self, other: &Tensor) -> Result<Tensor, NnError> {
        if self.shape() != other.shape() {
            return Err(self.shape_err("minimum", Some(other)));
        }
        let data = zip_map(&self.inner.borrow().data, &other.inner.borrow().data, |a, b| a.min(b));
        Ok(self.binary(other, Op::Minimum, data, self.shape()))
    }

    /// Elementwise maximum; on ties the gradient routes to `self`.
    pub fn maximum(&self, other: &Tensor) -> Result<Tensor, NnError> {
        if self.shape() != other.shape() {
            return Err(self.shape_err("maximum", Some(other)));
        }
        let data = zip_map(&self.inner.borrow().data, &other.inner.borrow().data, |a, b| a.max(b));
        Ok(self.binary(other, Op::Maximum, data, self.shape()))
    }

    /// Elementwise select: `mask[i] ? self[i] : other[i]`.
    pub fn where_mask(&self, mask: &[bool], other: &Tensor) -> Result<Tensor, NnError> {
        if self.shape() != other.shape() || mask.len() != numel(&self.shape()) {
            return Err(self.shape_err("where_mask", Some(other)));
        }
        let a = self.inner.borrow();
        let b = other.inner.borrow();
        let data = mask
            .iter()
            .enumerate()
            .map(|(i, &m)| if m { a.data[i] } else { b.data[i] })
            .collect();
        drop((a, b));
        let rg = (self.requires_grad() || other.requires_grad()) && grad_enabled();
        let parents = if rg { vec![self.clone(), other.clone()] } else { vec![] };
        Ok(Tensor::new(
            self.shape(),
            data,
            rg,
            if rg { Op::WhereMask { mask: mask.to_vec() } } else { Op::Leaf },
            parents,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, NnError> {
        if numel(shape) != numel(&self.shape()) {
            return Err(self.shape_err("reshape", None));
        }
        let data = self.inner.borrow().data.clone();
        Ok(self.unary(Op::Reshape, data, shape.to_vec()))
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

// out (m×n) += a (m×k) · b (k×n)
fn mm_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let or = &mut out[i * n..(i + 1) * n];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
}

// out (k×n) += aᵀ · b where a is (m×k), b is (m×n)
fn mm_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let br = &b[i * n..(i + 1) * n];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let or = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
}

// out (m×n) += a (m×k) · bᵀ where b is (n×k)
fn mm_nt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let or = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += ar[p] * br[p];
            }
            or[j] += s;
        }
    }
}

/// Backpropagates from a scalar loss, accumulating gradients into every
/// reachable leaf with `requires_grad`. The visited graph is consumed.
pub fn backward(loss: &Tensor) -> Result<(), NnError> {
    if numel(&loss.shape()) != 1 {
        return Err(NnError::NotScalarLoss(format!("{:?}", loss.shape())));
    }
    if !loss.requires_grad() {
        return Err(NnError::GradFreeGraph);
    }

    // Iterative DFS for a reverse topological order over the graph.
    let mut order: Vec<Tensor> = Vec::new();
    let mut state: HashMap<usize, u8> = HashMap::new(); // 1 = open, 2 = done
    let mut stack: Vec<(Tensor, usize)> = vec![(loss.clone(), 0)];
    while let Some((node, child)) = stack.pop() {
        let key = node.ptr();
        if child == 0 {
            match state.get(&key) {
                Some(2) => continue,
                Some(1) => {}
                _ => {
                    if matches!(node.inner.borrow().op, Op::Consumed) {
                        return Err(NnError::ConsumedTape);
                    }
                    state.insert(key, 1);
                }
            }
        }
        let parent = {
            let inner = node.inner.borrow();
            inner.parents.get(child).cloned()
        };
        match parent {
            Some(p) => {
                stack.push((node, child + 1));
                if !matches!(state.get(&p.ptr()), Some(2)) {
                    stack.push((p, 0));
                }
            }
            None => {
                state.insert(key, 2);
                order.push(node);
            }
        }
    }

    let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
    grads.insert(loss.ptr(), vec![1.0]);

    for node in order.iter().rev() {
        let gout = match grads.remove(&node.ptr()) {
            Some(g) => g,
            None => continue, // not on a path that requires grad
        };
        let mut inner = node.inner.borrow_mut();
        if matches!(inner.op, Op::Leaf) {
            if inner.requires_grad {
                match &mut inner.grad {
                    Some(g) => {
                        for (gi, go) in g.iter_mut().zip(&gout) {
                            *gi += go;
                        }
                    }
                    None => inner.grad = Some(gout),
                }
            }
            continue;
        }

        let parents = std::mem::take(&mut inner.parents);
        let op = std::mem::replace(&mut inner.op, Op::Consumed);
        let node_data = &inner.data;
        let node_shape = inner.shape.clone();

        let mut send = |t: &Tensor, contrib: Vec<f64>| {
            if !t.requires_grad() {
                return;
            }
            match grads.get_mut(&t.ptr()) {
                Some(g) => {
                    for (gi, c) in g.iter_mut().zip(&contrib) {
                        *gi += c;
                    }
                }
                None => {
                    grads.insert(t.ptr(), contrib);
                }
            }
        };

        match &op {
            Op::Leaf | Op::Consumed => unreachable!(),
            Op::Matmul => {
                let a = &parents[0];
                let b = &parents[1];
                let (m, k) = as_2d(&a.inner.borrow().shape);
                let n = as_2d(&b.inner.borrow().shape).1;
                if a.requires_grad() {
                    let mut da = vec![0.0; m * k];
                    mm_nt_acc(&gout, &b.inner.borrow().data, m, n, k, &mut da);
                    send(a, da);
                }
                if b.requires_grad() {
                    let mut db = vec![0.0; k * n];
                    mm_tn_acc(&a.inner.borrow().data, &gout, m, k, n, &mut db);
                    send(b, db);
                }
            }
            Op::Transpose => {
                let a = &parents[0];
                let (m, n) = as_2d(&a.inner.borrow().shape);
                // gout is (n×m); transpose it back
                let mut da = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        da[j * n + i] = gout[i * m + j];
                    }
                }
                send(a, da);
            }
            Op::Bmm { batch } => {
                let a = &parents[0];
                let b = &parents[1];
                let (rows_a, k) = as_2d(&a.inner.borrow().shape);
                let m = as_2d(&b.inner.borrow().shape).1;
                let n = rows_a / batch;
                if a.requires_grad() {
                    let bd = b.inner.borrow();
                    let mut da = vec![0.0; rows_a * k];
                    for i in 0..*batch {
                        mm_nt_acc(
                            &gout[i * n * m..(i + 1) * n * m],
                            &bd.data[i * k * m..(i + 1) * k * m],
                            n,
                            m,
                            k,
                            &mut da[i * n * k..(i + 1) * n * k],
                        );
                    }
                    drop(bd);
                    send(a, da);
                }
                if b.requires_grad() {
                    let ad = a.inner.borrow();
                    let mut db = vec![0.0; batch * k * m];
                    for i in 0..*batch {
                        mm_tn_acc(
                            &ad.data[i * n * k..(i + 1) * n * k],
                            &gout[i * n * m..(i + 1) * n * m],
                            n,
                            k,
                            m,
                            &mut db[i * k * m..(i + 1) * k * m],
                        );
                    }
                    drop(ad);
                    send(b, db);
                }
            }
            Op::BmmNT { batch } => {
                let a = &parents[0];
                let b = &parents[1];
                let (rows_a, k) = as_2d(&a.inner.borrow().shape);
                let rows_b = as_2d(&b.inner.borrow().shape).0;
                let n = rows_a / batch;
                let m = rows_b / batch;
                if a.requires_grad() {
                    // dA_i = dC_i · B_i — dC_i (n×m), B_i (m×k)
                    let bd = b.inner.borrow();
                    let mut da = vec![0.0; rows_a * k];
                    for i in 0..*batch {
                        mm_acc(
                            &gout[i * n * m..(i + 1) * n * m],
                            &bd.data[i * m * k..(i + 1) * m * k],
                            n,
                            m,
                            k,
                            &mut da[i * n * k..(i + 1) * n * k],
                        );
                    }
                    drop(bd);
                    send(a, da);
                }
                if b.requires_grad() {
                    // dB_i = dC_iᵀ · A_i — dC_i (n×m) → (m×n), A_i (n×k)
                    let ad = a.inner.borrow();
                    let mut db = vec![0.0; rows_b * k];
                    for i in 0..*batch {
                        mm_tn_acc(
                            &gout[i * n * m..(i + 1) * n * m],
                            &ad.data[i * n * k..(i + 1) * n * k],
                            n,
                            m,
                            k,
                            &mut db[i * m * k..(i + 1) * m * k],
                        );
                    }
                    drop(ad);
                    send(b, db);
                }
            }
            Op::Add => {
                send(&parents[0], gout.clone());
                send(&parents[1], gout);
            }
            Op::AddRow => {
                let a = &parents[0];
                let r = &parents[1];
                let (m, n) = as_2d(&a.inner.borrow().shape);
                if r.requires_grad() {
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += gout[i * n + j];
                        }
                    }
                    send(r, dr);
                }
                send(a, gout);
            }
            Op::Sub => {
                send(&parents[0], gout.clone());
                send(&parents[1], gout.iter().map(|g| -g).collect());
            }
            Op::Mul => {
                let a = &parents[0];
                let b = &parents[1];
                if a.requires_grad() {
                    let bd = b.inner.borrow();
                    send(a, zip_map(&gout, &bd.data, |g, v| g * v));
                }
                if b.requires_grad() {
                    let ad = a.inner.borrow();
                    send(b, zip_map(&gout, &ad.data, |g, v| g * v));
                }
            }
            Op::MulRow => {
                let a = &parents[0];
                let r = &parents[1];
                let (m, n) = as_2d(&a.inner.borrow().shape);
                if a.requires_grad() {
                    let rd = r.inner.borrow();
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = gout[i * n + j] * rd.data[j];
                        }
                    }
                    drop(rd);
                    send(a, da);
                }
                if r.requires_grad() {
                    let ad = a.inner.borrow();
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += gout[i * n + j] * ad.data[i * n + j];
                        }
                    }
                    drop(ad);
                    send(r, dr);
                }
            }
            Op::MulCol => {
                let a = &parents[0];
                let c = &parents[1];
                let (m, n) = as_2d(&a.inner.borrow().shape);
                if a.requires_grad() {
                    let cd = c.inner.borrow();
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = gout[i * n + j] * cd.data[i];
                        }
                    }
                    drop(cd);
                    send(a, da);
                }
                if c.requires_grad() {
                    let ad = a.inner.borrow();
                    let mut dc = vec![0.0; m];
                    for i in 0..m {
                        for j in 0..n {
                            dc[i] += gout[i * n + j] * ad.data[i * n + j];
                        }
                    }
                    drop(ad);
                    send(c, dc);
                }
            }
            Op::Neg => send(&parents[0], gout.iter().map(|g| -g).collect()),
            Op::Scale(s) => send(&parents[0], gout.iter().map(|g| g * s).collect()),
            Op::AddScalar => send(&parents[0], gout),
            Op::Exp => send(&parents[0], zip_map(&gout, node_data, |g, y| g * y)),
            Op::Log => {
                let ad = parents[0].inner.borrow();
                let da = zip_map(&gout, &ad.data, |g, x| g / x);
                drop(ad);
                send(&parents[0], da);
            }
            Op::Tanh => send(&parents[0], zip_map(&gout, node_data, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid => send(&parents[0], zip_map(&gout, node_data, |g, y| g * y * (1.0 - y))),
            Op::Gelu => {
                let ad = parents[0].inner.borrow();
                let da = zip_map(&gout, &ad.data, |g, x| g * gelu_grad(x));
                drop(ad);
                send(&parents[0], da);
            }
            Op::Softplus => {
                let ad = parents[0].inner.borrow();
                let da = zip_map(&gout, &ad.data, |g, x| g * sigmoid(x));
                drop(ad);
                send(&parents[0], da);
            }
            Op::SoftmaxRows => {
                let (m, n) = as_2d(&node_shape);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let y = &node_data[i * n..(i + 1) * n];
                    let g = &gout[i * n..(i + 1) * n];
                    let dot: f64 = y.iter().zip(g).map(|(yv, gv)| yv * gv).sum();
                    for j in 0..n {
                        da[i * n + j] = y[j] * (g[j] - dot);
                    }
                }
                send(&parents[0], da);
            }
            Op::LayerNormRows { eps } => {
                let a = &parents[0];
                let ad = a.inner.borrow();
                let (m, n) = as_2d(&node_shape);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let x = &ad.data[i * n..(i + 1) * n];
                    let y = &node_data[i * n..(i + 1) * n];
                    let g = &gout[i * n..(i + 1) * n];
                    let mean = x.iter().sum::<f64>() / n as f64;
                    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let g_mean = g.iter().sum::<f64>() / n as f64;
                    let gy_mean = g.iter().zip(y).map(|(gv, yv)| gv * yv).sum::<f64>() / n as f64;
                    for j in 0..n {
                        da[i * n + j] = inv * (g[j] - g_mean - y[j] * gy_mean);
                    }
                }
                drop(ad);
                send(a, da);
            }
            Op::MeanRowsGrouped { group } => {
                let a = &parents[0];
                let (m, n) = as_2d(&a.inner.borrow().shape);
                let mut da = vec![0.0; m * n];
                let scale = 1.0 / *group as f64;
                for (bi, chunk) in gout.chunks(n).enumerate() {
                    for i in 0..*group {
                        for j in 0..n {
                            da[(bi * group + i) * n + j] = chunk[j] * scale;
                        }
                    }
                }
                send(a, da);
            }
            Op::SumAll => {
                let a = &parents[0];
                let len = numel(&a.shape());
                send(a, vec![gout[0]; len]);
            }
            Op::MeanAll => {
                let a = &parents[0];
                let len = numel(&a.shape());
                send(a, vec![gout[0] / len as f64; len]);
            }
            Op::SumCols => {
                let a = &parents[0];
                let (m, n) = as_2d(&a.inner.borrow().shape);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = gout[i];
                    }
                }
                send(a, da);
            }
            Op::ConcatCols { widths } => {
                let total: usize = widths.iter().sum();
                let m = as_2d(&node_shape).0;
                let mut off = 0;
                for (p, &w) in parents.iter().zip(widths) {
                    if p.requires_grad() {
                        let mut dp = vec![0.0; m * w];
                        for i in 0..m {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&gout[i * total + off..i * total + off + w]);
                        }
                        send(p, dp);
                    }
                    off += w;
                }
            }
            Op::SliceCols { start, len } => {
                let a = &parents[0];
                let (m, n) = as_2d(&a.inner.borrow().shape);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    da[i * n + start..i * n + start + len]
                        .copy_from_slice(&gout[i * len..(i + 1) * len]);
                }
                send(a, da);
            }
            Op::GatherRows { indices } => {
                let a = &parents[0];
                let (m, n) = as_2d(&a.inner.borrow().shape);
                let mut da = vec![0.0; m * n];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..n {
                        da[i * n + j] += gout[r * n + j];
                    }
                }
                send(a, da);
            }
            Op::ScatterAddRows { indices, total_rows } => {
                let a = &parents[0];
                let n = as_2d(&a.inner.borrow().shape).1;
                debug_assert_eq!(gout.len(), total_rows * n);
                let mut da = vec![0.0; indices.len() * n];
                for (r, &i) in indices.iter().enumerate() {
                    da[r * n..(r + 1) * n].copy_from_slice(&gout[i * n..(i + 1) * n]);
                }
                send(a, da);
            }
            Op::TileRows { times } => {
                let a = &parents[0];
                let len = numel(&a.shape());
                let mut da = vec![0.0; len];
                for t in 0..*times {
                    for j in 0..len {
                        da[j] += gout[t * len + j];
                    }
                }
                send(a, da);
            }
            Op::RepeatRowsEach { times } => {
                let a = &parents[0];
                let (m, n) = as_2d(&a.inner.borrow().shape);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for t in 0..*times {
                        for j in 0..n {
                            da[i * n + j] += gout[(i * times + t) * n + j];
                        }
                    }
                }
                send(a, da);
            }
            Op::Clamp { lo, hi } => {
                let ad = parents[0].inner.borrow();
                let da = zip_map(&gout, &ad.data, |g, x| if x >= *lo && x <= *hi { g } else { 0.0 });
                drop(ad);
                send(&parents[0], da);
            }
            Op::Minimum => {
                let a = &parents[0];
                let b = &parents[1];
                let ad = a.inner.borrow().data.clone();
                let bd = b.inner.borrow().data.clone();
                if a.requires_grad() {
                    send(a, (0..gout.len()).map(|i| if ad[i] <= bd[i] { gout[i] } else { 0.0 }).collect());
                }
                if b.requires_grad() {
                    send(b, (0..gout.len()).map(|i| if bd[i] < ad[i] { gout[i] } else { 0.0 }).collect());
                }
            }
            Op::Maximum => {
                let a = &parents[0];
                let b = &parents[1];
                let ad = a.inner.borrow().data.clone();
                let bd = b.inner.borrow().data.clone();
                if a.requires_grad() {
                    send(a, (0..gout.len()).map(|i| if ad[i] >= bd[i] { gout[i] } else { 0.0 }).collect());
                }
                if b.requires_grad() {
                    send(b, (0..gout.len()).map(|i| if bd[i] > ad[i] { gout[i] } else { 0.0 }).collect());
                }
            }
            Op::WhereMask { mask } => {
                let a = &parents[0];
                let b = &parents[1];
                if a.requires_grad() {
                    send(a, mask.iter().zip(&gout).map(|(&m, &g)| if m { g } else { 0.0 }).collect());
                }
                if b.requires_grad() {
                    send(b, mask.iter().zip(&gout).map(|(&m, &g)| if !m { g } else { 0.0 }).collect());
                }
            }
            Op::Reshape => send(&parents[0], gout),
        }
    }
    Ok(())
}
