//! Reverse-mode differentiation over the numeric kernel set.
//!
//! A [`Graph`] is a dynamically built tape: each operation validates its
//! inputs, computes its value eagerly, and records enough to run the exact
//! backward pass later. Graphs are confined to one thread; distinct graphs
//! may run concurrently. [`check::finite_diff_check`] certifies analytic
//! gradients against central finite differences.

pub mod check;
pub mod graph;

pub use check::{finite_diff_check, BuildLoss, GradCheckEntry, GradReport, ParamStore};
pub use graph::{Gradients, Graph, NodeId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error(transparent)]
    Num(#[from] numkit::NumError),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("graph op {op}: {detail}")]
    BadOp { op: &'static str, detail: String },
    #[error("parameter {0} redeclared with a different shape")]
    ParamShapeConflict(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("nothing masked: Ω == 0")]
    NothingMasked,
}

pub type Result<T> = std::result::Result<T, DiffError>;
