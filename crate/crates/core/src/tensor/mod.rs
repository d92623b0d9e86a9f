//! Dense tensors with tape-free reverse-mode differentiation.
//!
//! A [`Tensor`] is a reference-counted node. Ops that touch at least one
//! tensor with `requires_grad` attach a backward closure holding their
//! parents; [`Tensor::backward`] walks the reachable nodes in reverse creation
//! order (node ids increase monotonically, so that is a valid topological
//! order) and accumulates gradients into the parents.

mod gemm;
pub mod gradcheck;
mod ops;
mod shape_ops;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::rc::Rc;

use num_like::FloatCore;

pub use gemm::Transpose;
pub use ops::cross_entropy;

use crate::rng::Rng;

/// Tensor-level failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("invalid shape {0:?}: need at least one dimension, all >= 1")]
    InvalidShape(Vec<usize>),
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by an earlier backward pass")]
    GraphConsumed,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

mod num_like {
    /// The handful of float operations the engine needs, implemented for f32 and f64.
    pub trait FloatCore: Copy + PartialOrd {
        fn exp(self) -> Self;
        fn ln(self) -> Self;
        fn sqrt(self) -> Self;
        fn tanh(self) -> Self;
        fn abs(self) -> Self;
        fn is_finite(self) -> bool;
        fn max(self, other: Self) -> Self;
    }
    macro_rules! impl_core {
        ($t:ty) => {
            impl FloatCore for $t {
                fn exp(self) -> Self {
                    <$t>::exp(self)
                }
                fn ln(self) -> Self {
                    <$t>::ln(self)
                }
                fn sqrt(self) -> Self {
                    <$t>::sqrt(self)
                }
                fn tanh(self) -> Self {
                    <$t>::tanh(self)
                }
                fn abs(self) -> Self {
                    <$t>::abs(self)
                }
                fn is_finite(self) -> bool {
                    <$t>::is_finite(self)
                }
                fn max(self, other: Self) -> Self {
                    <$t>::max(self, other)
                }
            }
        };
    }
    impl_core!(f32);
    impl_core!(f64);
}

/// Scalar type a tensor can hold.
pub trait Element:
    FloatCore
    + Default
    + fmt::Debug
    + fmt::Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self {
        Self::of(0.0)
    }
    fn one() -> Self {
        Self::of(1.0)
    }

    /// `c = alpha * a @ b + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    fn of(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        (rsa, csa): (isize, isize),
        b: &[Self],
        (rsb, csb): (isize, isize),
        beta: Self,
        c: &mut [Self],
    ) {
        gemm::check_extent(m, k, a.len(), rsa, csa);
        gemm::check_extent(k, n, b.len(), rsb, csb);
        assert!(c.len() >= m * n);
        // SAFETY: extents checked above; c is a dense row-major m x n block.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    fn of(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        (rsa, csa): (isize, isize),
        b: &[Self],
        (rsb, csb): (isize, isize),
        beta: Self,
        c: &mut [Self],
    ) {
        gemm::check_extent(m, k, a.len(), rsa, csa);
        gemm::check_extent(k, n, b.len(), rsb, csb);
        assert!(c.len() >= m * n);
        // SAFETY: as for f32.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

/// Backward closure: `(output data, output grad, parents) -> per-parent grads`.
pub type BackwardFn<T> = Box<dyn FnOnce(&[T], &[T], &[Tensor<T>]) -> Vec<Option<Vec<T>>>>;

struct GradFn<T: Element> {
    parents: Vec<Tensor<T>>,
    apply: BackwardFn<T>,
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    grad_fn: RefCell<Option<GradFn<T>>>,
    consumed: Cell<bool>,
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Initial contents for [`Tensor::make`].
pub enum Fill<'a> {
    Zeros,
    Constant(f64),
    Uniform { low: f64, high: f64, rng: &'a mut Rng },
    TruncatedNormal { std: f64, rng: &'a mut Rng },
}

pub struct Tensor<T: Element> {
    node: Rc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.node.requires_grad)
            .finish_non_exhaustive()
    }
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn from_parts(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        Self {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                grad_fn: RefCell::new(grad_fn),
                consumed: Cell::new(false),
            }),
        }
    }

    /// Constant leaf.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    /// Leaf that collects gradients.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::from_parts(t.node.shape.clone(), t.into_data(), true, None))
    }

    pub fn scalar(x: T) -> Self {
        Self::from_parts(vec![1], vec![x], false, None)
    }

    pub fn make(shape: &[usize], fill: Fill<'_>) -> Result<Self> {
        check_shape(shape)?;
        let n = numel(shape);
        let data = match fill {
            Fill::Zeros => vec![T::zero(); n],
            Fill::Constant(c) => vec![T::of(c); n],
            Fill::Uniform { low, high, rng } => (0..n).map(|_| T::of(rng.uniform(low, high))).collect(),
            Fill::TruncatedNormal { std, rng } => (0..n).map(|_| T::of(rng.truncated_normal(std))).collect(),
        };
        Self::new(shape, data)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::make(shape, Fill::Zeros)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::make(shape, Fill::Constant(value))
    }

    /// Result of an op. Attaches `backward` only when some parent tracks gradients.
    pub fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        debug_assert_eq!(numel(&shape), data.len(), "{op}");
        if !data.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            parents,
            apply: backward,
        });
        Ok(Self::from_parts(shape, data, requires_grad, grad_fn))
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    fn into_data(self) -> Vec<T> {
        match Rc::try_unwrap(self.node) {
            Ok(node) => node.data,
            Err(rc) => rc.data.clone(),
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Same data, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.node.shape.clone(), self.node.data.clone(), false, None)
    }

    fn accumulate(&self, g: Vec<T>) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode pass from this single-element loss. The recorded graph is
    /// released afterwards; calling again on the same loss is an error.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if self.node.consumed.get() {
            return Err(TensorError::GraphConsumed);
        }
        self.node.consumed.set(true);
        if !self.requires_grad() {
            return Ok(());
        }

        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.node.id) {
                continue;
            }
            if let Some(gf) = t.node.grad_fn.borrow().as_ref() {
                stack.extend(gf.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            order.push(t);
        }
        order.sort_unstable_by(|a, b| b.node.id.cmp(&a.node.id));

        self.accumulate(vec![T::one()]);
        for t in &order {
            let Some(gf) = t.node.grad_fn.borrow_mut().take() else {
                continue;
            };
            // Interior gradients are not kept once propagated.
            let Some(grad_out) = t.node.grad.borrow_mut().take() else {
                continue;
            };
            let grads = (gf.apply)(&t.node.data, &grad_out, &gf.parents);
            for (parent, g) in gf.parents.iter().zip(grads) {
                if let Some(g) = g {
                    if parent.requires_grad() {
                        debug_assert_eq!(g.len(), parent.numel());
                        parent.accumulate(g);
                    }
                }
            }
        }
        Ok(())
    }
}
