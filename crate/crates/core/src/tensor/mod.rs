//! Minimal dense tensor library with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted value. Operations that
//! consume at least one tensor with `requires_grad` record their inputs so
//! that [`Tensor::backward`] can walk the graph in reverse topological order.
//! Only leaf tensors (parameters and explicit inputs) keep gradient buffers;
//! intermediate gradients live for the duration of one backward pass.
//!
//! Everything is generic over [`Float`] so the same graph can run in `f32`
//! for training and in `f64` for finite-difference checks.

mod grad_check;
mod kernels;
mod ops;
mod rng;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

pub use grad_check::{compare_gradients, grad_check, GradCheckReport};
pub use ops::{
    add, add_row, concat_last, concat_last_many, conv1d, conv1d_same, dropout, layer_norm, linear, matmul,
    matmul_nt, mul, nll_loss, relu, scale, slice_last, softmax_rows, sum, Reduction,
};
pub use rng::Rng;

use ops::Op;

/// Errors raised by tensor construction and tensor operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{0}")]
    InvalidConfig(String),
    #[error("softmax row {row} is entirely masked")]
    FullyMaskedRow { row: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("target index {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Scalar element type of a [`Tensor`].
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n` buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("finite cast")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite cast")
    }
}

impl Float for f32 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Float for f64 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Node<F: Float> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    grad: Option<Mutex<Vec<F>>>,
    op: Option<Op<F>>,
}

/// Dense row-major tensor participating in a reverse-mode graph.
pub struct Tensor<F: Float = f32>(Arc<Node<F>>);

impl<F: Float> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<F: Float> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Float> Tensor<F> {
    /// Builds a constant (non-differentiable) tensor.
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// Builds a leaf tensor whose gradient is accumulated by `backward`.
    pub fn param(shape: &[usize], data: Vec<F>) -> Result<Self> {
        Self::leaf(shape, data, true)
    }

    fn leaf(shape: &[usize], data: Vec<F>, requires_grad: bool) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidConfig(format!(
                "dimension sizes must be positive, got {shape:?}"
            )));
        }
        let expected = numel(shape);
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        let grad = requires_grad.then(|| Mutex::new(vec![F::zero(); expected]));
        Ok(Self::from_node(shape.to_vec(), data, requires_grad, grad, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![F::zero(); numel(shape)])
    }

    pub fn scalar(v: F) -> Self {
        Self::from_node(vec![1], vec![v], false, None, None)
    }

    fn from_node(
        shape: Vec<usize>,
        data: Vec<F>,
        requires_grad: bool,
        grad: Option<Mutex<Vec<F>>>,
        op: Option<Op<F>>,
    ) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad,
            op,
        }))
    }

    /// Result of an op: records `op` only when some input needs gradients.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<F>, op: Op<F>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        if op.any_requires_grad() {
            Self::from_node(shape, data, true, None, Some(op))
        } else {
            Self::from_node(shape, data, false, None, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[F] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Stable identity of the underlying node.
    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Snapshot of the accumulated gradient of a leaf tensor.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.0
            .grad
            .as_ref()
            .map(|g| g.lock().expect("grad lock poisoned").clone())
    }

    pub fn zero_grad(&self) {
        if let Some(g) = &self.0.grad {
            g.lock()
                .expect("grad lock poisoned")
                .iter_mut()
                .for_each(|v| *v = F::zero());
        }
    }

    /// Returns a fresh constant tensor holding the same values.
    pub fn detach(&self) -> Self {
        Self::from_node(self.0.shape.clone(), self.0.data.clone(), false, None, None)
    }

    /// Copies values into a new leaf of another float type.
    pub fn cast<G: Float>(&self) -> Tensor<G> {
        let data = self
            .0
            .data
            .iter()
            .map(|v| G::from_f64_lossy(v.as_f64()))
            .collect();
        Tensor::leaf(&self.0.shape, data, self.0.requires_grad).expect("shape already valid")
    }

    /// Same data with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(Self::from_op(
            shape.to_vec(),
            self.0.data.clone(),
            Op::Reshape(self.clone()),
        ))
    }

    pub fn item(&self) -> Option<F> {
        (self.numel() == 1).then(|| self.0.data[0])
    }

    /// Number of columns when viewed as a matrix over the last axis.
    pub(crate) fn last_dim(&self) -> usize {
        *self.0.shape.last().expect("shape is never empty")
    }

    pub(crate) fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    pub(crate) fn node(&self) -> &Node<F> {
        &self.0
    }
}

impl<F: Float> Node<F> {
    pub(crate) fn accumulate_grad(&self, g: &[F]) {
        if let Some(buf) = &self.grad {
            let mut buf = buf.lock().expect("grad lock poisoned");
            for (b, v) in buf.iter_mut().zip(g) {
                *b += *v;
            }
        }
    }
}
