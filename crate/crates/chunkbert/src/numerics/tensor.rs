//! Dense row-major tensors with a dynamically built gradient graph.
//!
//! Every operation that consumes tensors with `requires_grad` produces a node
//! holding its parents and a backward closure. Calling [`Tensor::backward`]
//! on a scalar walks the recorded graph in reverse creation order and
//! accumulates gradients into every reachable node; leaves created through
//! [`crate::numerics::Parameter`] keep their gradient buffers alive across
//! calls so an optimizer can consume them.
//!
//! Reductions (sums, means, variances, inner products, normalizer terms)
//! accumulate in 64-bit floats even when elements are stored in 32 bits.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Element type of a tensor: either `f32` or `f64`.
pub trait Scalar:
    Float + num_traits::NumAssign + Copy + fmt::Debug + fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("conv1d_valid: input has {t} rows but the kernel spans {w}")]
    InputTooShort { t: usize, w: usize },
    #[error("max_over_time: input is empty")]
    EmptyInput,
    #[error("layer_norm: feature dimension is zero")]
    ZeroFeatureDim,
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("cross_entropy_loss: target {target} out of range for {classes} classes (row {row})")]
    TargetOutOfRange {
        row: usize,
        target: usize,
        classes: usize,
    },
    #[error("binary_cross_entropy_loss: target at ({row}, {col}) is {value}, expected 0 or 1")]
    NonBinaryTarget { row: usize, col: usize, value: f64 },
    #[error("finite_difference_check: forward is not deterministic ({first} vs {second})")]
    NonDeterministicForward { first: f64, second: f64 },
    #[error("finite_difference_check: loss is not finite ({value})")]
    NonFiniteLoss { value: f64 },
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` with gradient recording disabled. Operations executed inside
/// produce plain leaves, so evaluation passes never grow the graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let previous = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(previous));
    out
}

type BackwardFn<S> = Box<dyn Fn(&Inner<S>)>;

struct Inner<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    requires_grad: bool,
    parents: Vec<Tensor<S>>,
    backward_fn: Option<BackwardFn<S>>,
}

/// Cheaply clonable handle to a tensor node. Values are immutable once an
/// operation has produced them; only parameter leaves are ever rewritten,
/// and only through the optimizer or the gradient checker.
pub struct Tensor<S: Scalar> {
    inner: Rc<Inner<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    fn leaf(shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Self {
        assert_eq!(
            numel_of(&shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        let grad = if requires_grad {
            Some(vec![S::zero(); data.len()])
        } else {
            None
        };
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(grad),
                requires_grad,
                parents: Vec::new(),
                backward_fn: None,
            }),
        }
    }

    fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        backward_fn: BackwardFn<S>,
    ) -> Self {
        let record = grad_enabled() && parents.iter().any(|p| p.inner.requires_grad);
        if !record {
            return Tensor::leaf(shape, data, false);
        }
        assert_eq!(numel_of(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: true,
                parents,
                backward_fn: Some(backward_fn),
            }),
        }
    }

    /// Builds a tensor from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        Tensor::leaf(shape.to_vec(), data, false)
    }

    /// Builds a 2-D tensor from rows, which must all have the same length.
    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows in from_rows");
            data.extend_from_slice(row);
        }
        Tensor::leaf(vec![r, c], data, false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::leaf(shape.to_vec(), vec![S::zero(); numel_of(shape)], false)
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Tensor::leaf(shape.to_vec(), vec![value; numel_of(shape)], false)
    }

    pub fn scalar(value: S) -> Self {
        Tensor::leaf(vec![], vec![value], false)
    }

    /// Samples elements from a normal distribution with the given standard
    /// deviation. Draws happen in `f64` and are rounded to the element type,
    /// so the same seed yields matching values at both precisions.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0_f64, std).expect("std must be finite and positive");
        let data = (0..numel_of(shape))
            .map(|_| S::from_f64(normal.sample(rng)))
            .collect();
        Tensor::leaf(shape.to_vec(), data, false)
    }

    pub(crate) fn leaf_with_grad(shape: &[usize], data: Vec<S>) -> Self {
        Tensor::leaf(shape.to_vec(), data, true)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.inner.shape.len(), 2, "rows() needs a 2-D tensor");
        self.inner.shape[0]
    }

    /// Number of columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.inner.shape.len(), 2, "cols() needs a 2-D tensor");
        self.inner.shape[1]
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.inner.data.borrow().clone()
    }

    /// Element at a flat row-major index.
    pub fn at(&self, index: usize) -> S {
        self.inner.data.borrow()[index]
    }

    /// Element of a 2-D tensor.
    pub fn get2(&self, row: usize, col: usize) -> S {
        let c = self.cols();
        self.inner.data.borrow()[row * c + col]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() needs a single-element tensor");
        self.inner.data.borrow()[0]
    }

    /// Snapshot of the accumulated gradient, zeros if nothing has flowed yet.
    pub fn grad_vec(&self) -> Vec<S> {
        self.inner
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![S::zero(); self.numel()])
    }

    pub(crate) fn zero_grad_buf(&self) {
        *self.inner.grad.borrow_mut() = Some(vec![S::zero(); self.numel()]);
    }

    pub(crate) fn write_data(&self, values: &[S]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), values.len());
        d.copy_from_slice(values);
    }

    pub(crate) fn set_at(&self, index: usize, value: S) {
        self.inner.data.borrow_mut()[index] = value;
    }

    fn accum_grad(&self, f: impl FnOnce(&mut [S])) {
        let mut slot = self.inner.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![S::zero(); self.numel()]);
        f(buf);
    }

    /// Runs reverse-mode differentiation from this scalar. Gradients
    /// accumulate into every reachable node; parameter leaves keep theirs
    /// until explicitly zeroed, so repeated calls sum their contributions.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.inner.shape.clone(),
            });
        }
        self.accum_grad(|g| g[0] += S::one());
        if !self.inner.requires_grad {
            return Ok(());
        }

        let mut nodes: Vec<Tensor<S>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.inner.id) {
                continue;
            }
            for p in &t.inner.parents {
                if p.inner.requires_grad {
                    stack.push(p.clone());
                }
            }
            nodes.push(t);
        }
        // Ids grow monotonically and an operation's output is always created
        // after its inputs, so descending id order is a valid reverse
        // topological order.
        nodes.sort_by(|a, b| b.inner.id.cmp(&a.inner.id));
        for node in &nodes {
            if node.inner.grad.borrow().is_none() {
                continue;
            }
            if let Some(f) = &node.inner.backward_fn {
                f(&node.inner);
            }
        }
        Ok(())
    }

    // ── elementwise and shape operations ──

    pub fn add(&self, other: &Tensor<S>) -> Tensor<S> {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let out: Vec<S> = {
            let a = self.inner.data.borrow();
            let b = other.inner.data.borrow();
            a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
        };
        Tensor::from_op(
            self.inner.shape.clone(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                for parent in &out.parents {
                    if parent.inner.requires_grad {
                        parent.accum_grad(|pg| {
                            for (pgi, &gi) in pg.iter_mut().zip(g) {
                                *pgi += gi;
                            }
                        });
                    }
                }
            }),
        )
    }

    pub fn sub(&self, other: &Tensor<S>) -> Tensor<S> {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Tensor<S>) -> Tensor<S> {
        assert_eq!(self.shape(), other.shape(), "mul: shape mismatch");
        let out: Vec<S> = {
            let a = self.inner.data.borrow();
            let b = other.inner.data.borrow();
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        Tensor::from_op(
            self.inner.shape.clone(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                let (a, b) = (&out.parents[0], &out.parents[1]);
                if a.inner.requires_grad {
                    let bd = b.inner.data.borrow();
                    a.accum_grad(|pg| {
                        for i in 0..pg.len() {
                            pg[i] += g[i] * bd[i];
                        }
                    });
                }
                if b.inner.requires_grad {
                    let ad = a.inner.data.borrow();
                    b.accum_grad(|pg| {
                        for i in 0..pg.len() {
                            pg[i] += g[i] * ad[i];
                        }
                    });
                }
            }),
        )
    }

    pub fn scale(&self, factor: f64) -> Tensor<S> {
        let k = S::from_f64(factor);
        let out: Vec<S> = self.inner.data.borrow().iter().map(|&x| x * k).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            out,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                out.parents[0].accum_grad(|pg| {
                    for (pgi, &gi) in pg.iter_mut().zip(g) {
                        *pgi += gi * k;
                    }
                });
            }),
        )
    }

    /// Adds a length-D bias row to every row of a 2-D tensor.
    pub fn add_row(&self, bias: &Tensor<S>) -> Tensor<S> {
        let (r, c) = (self.rows(), self.cols());
        assert_eq!(bias.shape(), [c], "add_row: bias length mismatch");
        let out: Vec<S> = {
            let x = self.inner.data.borrow();
            let b = bias.inner.data.borrow();
            x.iter()
                .enumerate()
                .map(|(i, &v)| v + b[i % c])
                .collect()
        };
        Tensor::from_op(
            vec![r, c],
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                let (x, b) = (&out.parents[0], &out.parents[1]);
                if x.inner.requires_grad {
                    x.accum_grad(|pg| {
                        for (pgi, &gi) in pg.iter_mut().zip(g) {
                            *pgi += gi;
                        }
                    });
                }
                if b.inner.requires_grad {
                    b.accum_grad(|pg| {
                        for (i, &gi) in g.iter().enumerate() {
                            pg[i % c] += gi;
                        }
                    });
                }
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<S> {
        assert_eq!(
            numel_of(shape),
            self.numel(),
            "reshape: element count mismatch {:?} -> {:?}",
            self.shape(),
            shape
        );
        let out = self.inner.data.borrow().clone();
        Tensor::from_op(
            shape.to_vec(),
            out,
            vec![self.clone()],
            Box::new(|out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                out.parents[0].accum_grad(|pg| {
                    for (pgi, &gi) in pg.iter_mut().zip(g) {
                        *pgi += gi;
                    }
                });
            }),
        )
    }

    pub fn transpose(&self) -> Tensor<S> {
        let (r, c) = (self.rows(), self.cols());
        let x = self.inner.data.borrow();
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        drop(x);
        Tensor::from_op(
            vec![c, r],
            out,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                out.parents[0].accum_grad(|pg| {
                    for i in 0..r {
                        for j in 0..c {
                            pg[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }),
        )
    }

    /// Rows `from..to` of a 2-D tensor as a new `(to-from) x cols` tensor.
    pub fn slice_rows(&self, from: usize, to: usize) -> Tensor<S> {
        let (r, c) = (self.rows(), self.cols());
        assert!(from <= to && to <= r, "slice_rows: range {from}..{to} out of {r}");
        let out = self.inner.data.borrow()[from * c..to * c].to_vec();
        Tensor::from_op(
            vec![to - from, c],
            out,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                out.parents[0].accum_grad(|pg| {
                    for (i, &gi) in g.iter().enumerate() {
                        pg[from * c + i] += gi;
                    }
                });
            }),
        )
    }

    /// Columns `from..to` of a 2-D tensor.
    pub fn slice_cols(&self, from: usize, to: usize) -> Tensor<S> {
        let (r, c) = (self.rows(), self.cols());
        assert!(from <= to && to <= c, "slice_cols: range {from}..{to} out of {c}");
        let w = to - from;
        let x = self.inner.data.borrow();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + from..i * c + to]);
        }
        drop(x);
        Tensor::from_op(
            vec![r, w],
            out,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                out.parents[0].accum_grad(|pg| {
                    for i in 0..r {
                        for j in 0..w {
                            pg[i * c + from + j] += g[i * w + j];
                        }
                    }
                });
            }),
        )
    }

    /// Zeroes whole rows of a 2-D tensor; `keep[i]` false clears row `i`.
    /// Cleared rows also block gradient flow.
    pub fn zero_rows(&self, keep: &[bool]) -> Tensor<S> {
        let (r, c) = (self.rows(), self.cols());
        assert_eq!(keep.len(), r, "zero_rows: mask length mismatch");
        let keep = keep.to_vec();
        let x = self.inner.data.borrow();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            if keep[i] {
                out.extend_from_slice(&x[i * c..(i + 1) * c]);
            } else {
                out.extend(std::iter::repeat(S::zero()).take(c));
            }
        }
        drop(x);
        Tensor::from_op(
            vec![r, c],
            out,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                out.parents[0].accum_grad(|pg| {
                    for i in 0..r {
                        if keep[i] {
                            for j in 0..c {
                                pg[i * c + j] += g[i * c + j];
                            }
                        }
                    }
                });
            }),
        )
    }

    // ── nonlinearities ──

    pub fn relu(&self) -> Tensor<S> {
        let out: Vec<S> = self
            .inner
            .data
            .borrow()
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            out,
            vec![self.clone()],
            Box::new(|out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                let x = out.parents[0].inner.data.borrow().clone();
                out.parents[0].accum_grad(|pg| {
                    for i in 0..pg.len() {
                        if x[i] > S::zero() {
                            pg[i] += g[i];
                        }
                    }
                });
            }),
        )
    }

    /// Tanh-approximated GELU, the feed-forward activation of the encoder.
    pub fn gelu(&self) -> Tensor<S> {
        const K: f64 = 0.7978845608;
        const A: f64 = 0.044715;
        let fwd = |x: f64| 0.5 * x * (1.0 + (K * (x + A * x * x * x)).tanh());
        let out: Vec<S> = self
            .inner
            .data
            .borrow()
            .iter()
            .map(|&x| S::from_f64(fwd(x.to_f64())))
            .collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            out,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                let x = out.parents[0].inner.data.borrow().clone();
                out.parents[0].accum_grad(|pg| {
                    for i in 0..pg.len() {
                        let xi = x[i].to_f64();
                        let t = (K * (xi + A * xi * xi * xi)).tanh();
                        let d = 0.5 * (1.0 + t)
                            + 0.5 * xi * (1.0 - t * t) * K * (1.0 + 3.0 * A * xi * xi);
                        pg[i] += g[i] * S::from_f64(d);
                    }
                });
            }),
        )
    }

    pub fn tanh(&self) -> Tensor<S> {
        let out: Vec<S> = self.inner.data.borrow().iter().map(|&x| x.tanh()).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            out,
            vec![self.clone()],
            Box::new(|out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                let y = out.data.borrow().clone();
                out.parents[0].accum_grad(|pg| {
                    for i in 0..pg.len() {
                        pg[i] += g[i] * (S::one() - y[i] * y[i]);
                    }
                });
            }),
        )
    }

    // ── reductions ──

    pub fn sum(&self) -> Tensor<S> {
        let total: f64 = self.inner.data.borrow().iter().map(|&v| v.to_f64()).sum();
        Tensor::from_op(
            vec![],
            vec![S::from_f64(total)],
            vec![self.clone()],
            Box::new(|out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present")[0];
                out.parents[0].accum_grad(|pg| {
                    for pgi in pg.iter_mut() {
                        *pgi += g;
                    }
                });
            }),
        )
    }

    pub fn mean(&self) -> Tensor<S> {
        let n = self.numel();
        assert!(n > 0, "mean of an empty tensor");
        self.sum().scale(1.0 / n as f64)
    }

    // ── matrix product ──

    /// `(M x K) @ (K x N) -> (M x N)`.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        if self.shape().len() != 2
            || other.shape().len() != 2
            || self.shape()[1] != other.shape()[0]
        {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let out = {
            let a = self.inner.data.borrow();
            let b = other.inner.data.borrow();
            matmul_raw(&a, &b, m, k, n)
        };
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                let (a, b) = (&out.parents[0], &out.parents[1]);
                if a.inner.requires_grad {
                    // dA = dC . B^T
                    let bd = b.inner.data.borrow();
                    a.accum_grad(|pg| {
                        for i in 0..m {
                            for kk in 0..k {
                                let mut acc = 0.0_f64;
                                for j in 0..n {
                                    acc += g[i * n + j].to_f64() * bd[kk * n + j].to_f64();
                                }
                                pg[i * k + kk] += S::from_f64(acc);
                            }
                        }
                    });
                }
                if b.inner.requires_grad {
                    // dB = A^T . dC
                    let ad = a.inner.data.borrow();
                    b.accum_grad(|pg| {
                        for kk in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0_f64;
                                for i in 0..m {
                                    acc += ad[i * k + kk].to_f64() * g[i * n + j].to_f64();
                                }
                                pg[kk * n + j] += S::from_f64(acc);
                            }
                        }
                    });
                }
            }),
        ))
    }

    // ── masked softmax ──

    /// Row-wise softmax over positions whose mask entry is true. Masked
    /// positions come out as exact zeros. A row with no admissible position
    /// degenerates to the uniform distribution over the whole row, which
    /// keeps all-padding attention rows finite; such rows are constant in
    /// the inputs and therefore pass no gradient.
    pub fn softmax_masked(&self, mask: &BoolMat) -> Result<Tensor<S>, TensorError> {
        if self.shape().len() != 2
            || mask.rows != self.shape()[0]
            || mask.cols != self.shape()[1]
        {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_masked",
                left: self.shape().to_vec(),
                right: vec![mask.rows, mask.cols],
            });
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let mask_data = mask.data.clone();
        let mut out = vec![S::zero(); r * c];
        let mut degenerate = vec![false; r];
        {
            let x = self.inner.data.borrow();
            for i in 0..r {
                let row = &x[i * c..(i + 1) * c];
                let live = (0..c).filter(|&j| mask_data[i * c + j]);
                let max = live
                    .clone()
                    .map(|j| row[j].to_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    degenerate[i] = true;
                    let u = S::from_f64(1.0 / c as f64);
                    for j in 0..c {
                        out[i * c + j] = u;
                    }
                    continue;
                }
                let mut denom = 0.0_f64;
                for j in live.clone() {
                    denom += (row[j].to_f64() - max).exp();
                }
                for j in live {
                    out[i * c + j] = S::from_f64((row[j].to_f64() - max).exp() / denom);
                }
            }
        }
        Ok(Tensor::from_op(
            vec![r, c],
            out,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                let y = out.data.borrow().clone();
                out.parents[0].accum_grad(|pg| {
                    for i in 0..r {
                        if degenerate[i] {
                            continue;
                        }
                        let mut dot = 0.0_f64;
                        for j in 0..c {
                            dot += y[i * c + j].to_f64() * g[i * c + j].to_f64();
                        }
                        for j in 0..c {
                            let yij = y[i * c + j].to_f64();
                            pg[i * c + j] +=
                                S::from_f64(yij * (g[i * c + j].to_f64() - dot));
                        }
                    }
                });
            }),
        ))
    }

    // ── layer normalization ──

    /// Normalizes every row of a 2-D tensor to zero mean and unit variance
    /// (population variance plus `eps`), then applies a learned per-feature
    /// gain and bias.
    pub fn layer_norm(
        &self,
        gain: &Tensor<S>,
        bias: &Tensor<S>,
        eps: f64,
    ) -> Result<Tensor<S>, TensorError> {
        let (r, c) = (self.rows(), self.cols());
        if c == 0 {
            return Err(TensorError::ZeroFeatureDim);
        }
        if gain.shape() != [c] || bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: self.shape().to_vec(),
                right: gain.shape().to_vec(),
            });
        }
        let mut out = vec![S::zero(); r * c];
        let mut normalized = vec![0.0_f64; r * c];
        let mut inv_std = vec![0.0_f64; r];
        {
            let x = self.inner.data.borrow();
            let gm = gain.inner.data.borrow();
            let bm = bias.inner.data.borrow();
            for i in 0..r {
                let row = &x[i * c..(i + 1) * c];
                let mean: f64 = row.iter().map(|&v| v.to_f64()).sum::<f64>() / c as f64;
                let var: f64 = row
                    .iter()
                    .map(|&v| {
                        let d = v.to_f64() - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / c as f64;
                let s = 1.0 / (var + eps).sqrt();
                inv_std[i] = s;
                for j in 0..c {
                    let xhat = (row[j].to_f64() - mean) * s;
                    normalized[i * c + j] = xhat;
                    out[i * c + j] =
                        S::from_f64(xhat * gm[j].to_f64() + bm[j].to_f64());
                }
            }
        }
        Ok(Tensor::from_op(
            vec![r, c],
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                let (x, gain, bias) = (&out.parents[0], &out.parents[1], &out.parents[2]);
                if gain.inner.requires_grad {
                    gain.accum_grad(|pg| {
                        for j in 0..c {
                            let mut acc = 0.0_f64;
                            for i in 0..r {
                                acc += g[i * c + j].to_f64() * normalized[i * c + j];
                            }
                            pg[j] += S::from_f64(acc);
                        }
                    });
                }
                if bias.inner.requires_grad {
                    bias.accum_grad(|pg| {
                        for j in 0..c {
                            let mut acc = 0.0_f64;
                            for i in 0..r {
                                acc += g[i * c + j].to_f64();
                            }
                            pg[j] += S::from_f64(acc);
                        }
                    });
                }
                if x.inner.requires_grad {
                    let gm = gain.inner.data.borrow();
                    x.accum_grad(|pg| {
                        for i in 0..r {
                            let mut mean_dxhat = 0.0_f64;
                            let mut mean_dxhat_xhat = 0.0_f64;
                            for j in 0..c {
                                let dxhat = g[i * c + j].to_f64() * gm[j].to_f64();
                                mean_dxhat += dxhat;
                                mean_dxhat_xhat += dxhat * normalized[i * c + j];
                            }
                            mean_dxhat /= c as f64;
                            mean_dxhat_xhat /= c as f64;
                            for j in 0..c {
                                let dxhat = g[i * c + j].to_f64() * gm[j].to_f64();
                                let dx = (dxhat
                                    - mean_dxhat
                                    - normalized[i * c + j] * mean_dxhat_xhat)
                                    * inv_std[i];
                                pg[i * c + j] += S::from_f64(dx);
                            }
                        }
                    });
                }
            }),
        ))
    }

    // ── valid 1-D convolution over rows ──

    /// Slides a `w x D` kernel over a `T x D` input with stride 1 and no
    /// padding, adding a scalar bias: output position `i` is
    /// `sum(input[i..i+w] * kernel) + bias`, giving `T - w + 1` values.
    pub fn conv1d_valid(
        &self,
        kernel: &Tensor<S>,
        bias: &Tensor<S>,
    ) -> Result<Tensor<S>, TensorError> {
        let (t, d) = (self.rows(), self.cols());
        let (w, kd) = (kernel.rows(), kernel.cols());
        if kd != d {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_valid",
                left: self.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        if t < w {
            return Err(TensorError::InputTooShort { t, w });
        }
        assert_eq!(bias.numel(), 1, "conv1d_valid: bias must be a scalar");
        let out_len = t - w + 1;
        let mut out = vec![S::zero(); out_len];
        {
            let x = self.inner.data.borrow();
            let k = kernel.inner.data.borrow();
            let b = bias.inner.data.borrow()[0].to_f64();
            for i in 0..out_len {
                let mut acc = 0.0_f64;
                for j in 0..w {
                    for f in 0..d {
                        acc += x[(i + j) * d + f].to_f64() * k[j * d + f].to_f64();
                    }
                }
                out[i] = S::from_f64(acc + b);
            }
        }
        Ok(Tensor::from_op(
            vec![out_len],
            out,
            vec![self.clone(), kernel.clone(), bias.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present");
                let (x, kernel, bias) = (&out.parents[0], &out.parents[1], &out.parents[2]);
                if x.inner.requires_grad {
                    let k = kernel.inner.data.borrow();
                    x.accum_grad(|pg| {
                        for i in 0..out_len {
                            let gi = g[i];
                            for j in 0..w {
                                for f in 0..d {
                                    pg[(i + j) * d + f] += gi * k[j * d + f];
                                }
                            }
                        }
                    });
                }
                if kernel.inner.requires_grad {
                    let xd = x.inner.data.borrow();
                    kernel.accum_grad(|pg| {
                        for j in 0..w {
                            for f in 0..d {
                                let mut acc = 0.0_f64;
                                for i in 0..out_len {
                                    acc += g[i].to_f64() * xd[(i + j) * d + f].to_f64();
                                }
                                pg[j * d + f] += S::from_f64(acc);
                            }
                        }
                    });
                }
                if bias.inner.requires_grad {
                    bias.accum_grad(|pg| {
                        let acc: f64 = g.iter().map(|&v| v.to_f64()).sum();
                        pg[0] += S::from_f64(acc);
                    });
                }
            }),
        ))
    }

    // ── max-over-time pooling ──

    /// Maximum of a 1-D tensor together with the index of the first
    /// occurrence. The gradient is one-hot at that index.
    pub fn max_over_time(&self) -> Result<(Tensor<S>, usize), TensorError> {
        assert_eq!(self.shape().len(), 1, "max_over_time: input must be 1-D");
        let n = self.numel();
        if n == 0 {
            return Err(TensorError::EmptyInput);
        }
        let (argmax, max) = {
            let x = self.inner.data.borrow();
            let mut best = (0usize, x[0]);
            for i in 1..n {
                if x[i] > best.1 {
                    best = (i, x[i]);
                }
            }
            best
        };
        let out = Tensor::from_op(
            vec![],
            vec![max],
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.borrow();
                let g = g.as_deref().expect("grad present")[0];
                out.parents[0].accum_grad(|pg| {
                    pg[argmax] += g;
                });
            }),
        );
        Ok((out, argmax))
    }
}

/// Row-major `(M x K) @ (K x N)` with 64-bit accumulation.
fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0_f64;
            for kk in 0..k {
                acc += a[i * k + kk].to_f64() * b[kk * n + j].to_f64();
            }
            out[i * n + j] = S::from_f64(acc);
        }
    }
    out
}

// ── concatenation ──

/// Stacks 2-D tensors with equal column counts on top of each other.
pub fn concat_rows<S: Scalar>(parts: &[Tensor<S>]) -> Tensor<S> {
    assert!(!parts.is_empty(), "concat_rows: no parts");
    let c = parts[0].cols();
    let mut total_rows = 0;
    let mut data = Vec::new();
    for p in parts {
        assert_eq!(p.cols(), c, "concat_rows: column mismatch");
        total_rows += p.rows();
        data.extend(p.inner.data.borrow().iter().copied());
    }
    let sizes: Vec<usize> = parts.iter().map(Tensor::numel).collect();
    Tensor::from_op(
        vec![total_rows, c],
        data,
        parts.to_vec(),
        Box::new(move |out| {
            let g = out.grad.borrow();
            let g = g.as_deref().expect("grad present");
            let mut offset = 0;
            for (p, &len) in out.parents.iter().zip(&sizes) {
                if p.inner.requires_grad {
                    let seg = &g[offset..offset + len];
                    p.accum_grad(|pg| {
                        for (pgi, &gi) in pg.iter_mut().zip(seg) {
                            *pgi += gi;
                        }
                    });
                }
                offset += len;
            }
        }),
    )
}

/// Stacks 2-D tensors with equal row counts side by side.
pub fn concat_cols<S: Scalar>(parts: &[Tensor<S>]) -> Tensor<S> {
    assert!(!parts.is_empty(), "concat_cols: no parts");
    let r = parts[0].rows();
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            assert_eq!(p.rows(), r, "concat_cols: row mismatch");
            p.cols()
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut data = vec![S::zero(); r * total];
    let mut offset = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        let pd = p.inner.data.borrow();
        for i in 0..r {
            data[i * total + offset..i * total + offset + w]
                .copy_from_slice(&pd[i * w..(i + 1) * w]);
        }
        offset += w;
    }
    Tensor::from_op(
        vec![r, total],
        data,
        parts.to_vec(),
        Box::new(move |out| {
            let g = out.grad.borrow();
            let g = g.as_deref().expect("grad present");
            let mut offset = 0;
            for (p, &w) in out.parents.iter().zip(&widths) {
                if p.inner.requires_grad {
                    p.accum_grad(|pg| {
                        for i in 0..r {
                            for j in 0..w {
                                pg[i * w + j] += g[i * total + offset + j];
                            }
                        }
                    });
                }
                offset += w;
            }
        }),
    )
}

/// Collects single-element tensors into a 1-D vector.
pub fn concat_scalars<S: Scalar>(parts: &[Tensor<S>]) -> Tensor<S> {
    assert!(!parts.is_empty(), "concat_scalars: no parts");
    let data: Vec<S> = parts
        .iter()
        .map(|p| {
            assert_eq!(p.numel(), 1, "concat_scalars: parts must be scalars");
            p.inner.data.borrow()[0]
        })
        .collect();
    Tensor::from_op(
        vec![parts.len()],
        data,
        parts.to_vec(),
        Box::new(|out| {
            let g = out.grad.borrow();
            let g = g.as_deref().expect("grad present");
            for (i, p) in out.parents.iter().enumerate() {
                if p.inner.requires_grad {
                    p.accum_grad(|pg| {
                        pg[0] += g[i];
                    });
                }
            }
        }),
    )
}

/// Gathers rows of an embedding table by id; gradients scatter-add back
/// into the table rows that were used.
pub fn embedding_lookup<S: Scalar>(table: &Tensor<S>, ids: &[u32]) -> Tensor<S> {
    let (v, d) = (table.rows(), table.cols());
    let ids: Vec<usize> = ids
        .iter()
        .map(|&id| {
            let id = id as usize;
            assert!(id < v, "embedding_lookup: id {id} out of table size {v}");
            id
        })
        .collect();
    let td = table.inner.data.borrow();
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in &ids {
        data.extend_from_slice(&td[id * d..(id + 1) * d]);
    }
    drop(td);
    let n = ids.len();
    Tensor::from_op(
        vec![n, d],
        data,
        vec![table.clone()],
        Box::new(move |out| {
            let g = out.grad.borrow();
            let g = g.as_deref().expect("grad present");
            out.parents[0].accum_grad(|pg| {
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        pg[id * d + j] += g[i * d + j];
                    }
                }
            });
        }),
    )
}

// ── losses ──

/// Mean softmax cross-entropy over rows of `B x K` logits against class
/// indices. Uses the log-sum-exp form, so extreme logits stay finite.
pub fn cross_entropy_loss<S: Scalar>(
    logits: &Tensor<S>,
    targets: &[usize],
) -> Result<Tensor<S>, TensorError> {
    let (b, k) = (logits.rows(), logits.cols());
    if targets.len() != b {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy_loss",
            left: logits.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    for (row, &t) in targets.iter().enumerate() {
        if t >= k {
            return Err(TensorError::TargetOutOfRange {
                row,
                target: t,
                classes: k,
            });
        }
    }
    let targets = targets.to_vec();
    let mut total = 0.0_f64;
    let mut probs = vec![0.0_f64; b * k];
    {
        let x = logits.inner.data.borrow();
        for i in 0..b {
            let row = &x[i * k..(i + 1) * k];
            let max = row.iter().map(|&v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0_f64;
            for &v in row {
                denom += (v.to_f64() - max).exp();
            }
            let lse = max + denom.ln();
            total += lse - row[targets[i]].to_f64();
            for j in 0..k {
                probs[i * k + j] = (row[j].to_f64() - max).exp() / denom;
            }
        }
    }
    total /= b as f64;
    Ok(Tensor::from_op(
        vec![],
        vec![S::from_f64(total)],
        vec![logits.clone()],
        Box::new(move |out| {
            let g = out.grad.borrow();
            let g = g.as_deref().expect("grad present")[0].to_f64();
            out.parents[0].accum_grad(|pg| {
                for i in 0..b {
                    for j in 0..k {
                        let indicator = if targets[i] == j { 1.0 } else { 0.0 };
                        pg[i * k + j] +=
                            S::from_f64(g * (probs[i * k + j] - indicator) / b as f64);
                    }
                }
            });
        }),
    ))
}

/// Mean element-wise sigmoid cross-entropy of `B x K` logits against a 0/1
/// target matrix, computed through the softplus form
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))` so large logits cannot overflow.
pub fn binary_cross_entropy_loss<S: Scalar>(
    logits: &Tensor<S>,
    targets: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    if logits.shape() != targets.shape() || logits.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "binary_cross_entropy_loss",
            left: logits.shape().to_vec(),
            right: targets.shape().to_vec(),
        });
    }
    let (b, k) = (logits.rows(), logits.cols());
    let targets_data: Vec<f64> = targets.inner.data.borrow().iter().map(|&v| v.to_f64()).collect();
    for (idx, &y) in targets_data.iter().enumerate() {
        if y != 0.0 && y != 1.0 {
            return Err(TensorError::NonBinaryTarget {
                row: idx / k,
                col: idx % k,
                value: y,
            });
        }
    }
    let n = (b * k) as f64;
    let mut total = 0.0_f64;
    {
        let x = logits.inner.data.borrow();
        for (i, &y) in targets_data.iter().enumerate() {
            let z = x[i].to_f64();
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
    }
    total /= n;
    Ok(Tensor::from_op(
        vec![],
        vec![S::from_f64(total)],
        vec![logits.clone()],
        Box::new(move |out| {
            let g = out.grad.borrow();
            let g = g.as_deref().expect("grad present")[0].to_f64();
            let x = out.parents[0].inner.data.borrow().clone();
            out.parents[0].accum_grad(|pg| {
                for i in 0..pg.len() {
                    let z = x[i].to_f64();
                    pg[i] += S::from_f64(g * (sigmoid(z) - targets_data[i]) / n);
                }
            });
        }),
    ))
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Softmax of a plain slice, for turning inference logits into scores.
pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Dense boolean matrix used for attention and softmax masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolMat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<bool>,
}

impl BoolMat {
    pub fn new(rows: usize, cols: usize, value: bool) -> Self {
        BoolMat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        BoolMat { rows, cols, data }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.cols + col] = value;
    }
}
