//! Minimal dense numeric core.
//!
//! Everything upstream (autodiff, the expert layers, surgery) is built from
//! the kernels in this crate: row-major tensors, a counter-based RNG,
//! matmul, softmax, layer norm, and a one-sided Jacobi SVD. All kernels are
//! pure functions over immutable inputs and are deterministic: same inputs
//! produce bit-identical outputs. Reductions run in a documented sequential
//! order so results are reproducible across runs and thread counts.

pub mod kernels;
pub mod rng;
pub mod svd;
pub mod tensor;

pub use kernels::{
    add, add_bias, dgelu, dsoftplus, gelu, layer_norm, matmul, mul, scale, sigmoid, softmax,
    softplus, sub, sum_axis0, transpose,
};
pub use rng::SeededRng;
pub use svd::{svd, Svd};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

/// Errors surfaced by numeric kernels.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid axis {axis} for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("empty axis in {op}")]
    EmptyAxis { op: &'static str },
    #[error("zero-length row in {op}")]
    ZeroLengthRow { op: &'static str },
    #[error("SVD did not converge within {sweeps} sweeps")]
    SvdNonConvergence { sweeps: usize },
}

pub type Result<T> = std::result::Result<T, NumError>;

use std::sync::atomic::{AtomicUsize, Ordering};

static THREAD_BUDGET: AtomicUsize = AtomicUsize::new(1);

/// Bound internal data parallelism. `1` (the default) keeps every kernel on
/// the calling thread. Larger budgets let `matmul` split output rows across
/// scoped threads; per-element summation order is unchanged, so results stay
/// bit-identical at any budget.
pub fn set_thread_budget(n: usize) {
    THREAD_BUDGET.store(n.max(1), Ordering::Relaxed);
}

pub(crate) fn thread_budget() -> usize {
    THREAD_BUDGET.load(Ordering::Relaxed)
}
