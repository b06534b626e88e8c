//! Dense f64 tensors with a reverse-mode tape.
//!
//! Every op returns a fresh [`Tensor`]. When any input requires a gradient the
//! result records its parents and a [`Backward`] closure, so calling
//! [`Tensor::backward`] on a scalar walks the graph in reverse topological
//! order. Leaves that require gradients are parameters; their data is the only
//! thing that is ever mutated after construction (by the optimizer).

mod autograd;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod ops;
pub mod optim;
pub mod params;
mod shape;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use autograd::Backward;
pub use ops::PoolKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every dimension must be >= 1")]
    InvalidShape(Vec<usize>),
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) struct Node {
    pub(crate) parents: Vec<Tensor>,
    pub(crate) op: Box<dyn Backward>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Reference-counted handle; cloning shares storage.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

/// Initial contents for [`Tensor::construct`].
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Full(f64),
    SeededGaussian(u64),
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    pub fn construct(init: Init, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Full(v) => vec![v; n],
            Init::SeededGaussian(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
            }
        };
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::construct(Init::Zeros, shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::construct(Init::Full(value), shape)
    }

    pub fn seeded_gaussian(seed: u64, shape: &[usize]) -> Result<Self> {
        Self::construct(Init::SeededGaussian(seed), shape)
    }

    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "from_vec",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// A fresh leaf holding a copy of this tensor's values, marked as a parameter.
    pub fn into_param(self) -> Self {
        let data = self.to_vec();
        Self::build(self.0.shape.clone(), data, true, None)
    }

    /// Detached copy: same values, no history, no gradient tracking.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, op: impl Backward + 'static) -> Self {
        if parents.iter().any(|p| p.requires_grad()) {
            Self::build(
                shape,
                data,
                true,
                Some(Node {
                    parents,
                    op: Box::new(op),
                }),
            )
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor with shape {:?}", self.shape());
        d[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(self.shape()).enumerate() {
            assert!(ix < dim, "index {ix} out of range for axis {i} of size {dim}");
            flat = flat * dim + ix;
        }
        self.data()[flat]
    }

    /// Overwrites the values of a leaf. Used by the optimizer, checkpoint
    /// loading and finite-difference probes.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        if !self.is_leaf() {
            return Err(TensorError::Contract("set_data on a non-leaf tensor".into()));
        }
        if values.len() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "set_data",
                lhs: self.shape().to_vec(),
                rhs: vec![values.len()],
            });
        }
        self.0
            .data
            .write()
            .expect("tensor data lock poisoned")
            .copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        let mut guard = self.0.data.write().expect("tensor data lock poisoned");
        f(&mut guard);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.grad_lock().clone()
    }

    pub(crate) fn grad_lock(&self) -> MutexGuard<'_, Option<Vec<f64>>> {
        self.0.grad.lock().expect("tensor grad lock poisoned")
    }

    /// Clears the stored gradient. Required before a second backward pass
    /// reaches this tensor.
    pub fn zero_grad(&self) {
        *self.grad_lock() = None;
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.data();
        let preview: Vec<f64> = d.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
