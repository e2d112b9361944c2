//! Hierarchical mixture-of-modality-experts transformer, desk scale.
//!
//! The crate is organized along the pipeline:
//!
//! - [`modality`] — the four input modalities and their channel layouts
//! - [`diff`] — reverse-mode differentiation over the numeric kernels, plus
//!   the finite-difference checker that certifies every analytic gradient
//! - [`objectives`] — load-balance loss, reconstruction targets (including
//!   the polarimetric power target), masked reconstruction loss
//! - [`data`] — synthetic scene generation, RAW ingestion, patchify, masking
//! - [`model`] — expert FFNs, noisy top-K gates, the layered expert banks,
//!   the encoder stack and the modal decoders
//! - [`surgery`] — activation profiling, modality decomposition, sparse
//!   expert pruning and dense knowledge integration (sum / average / SVD)
//! - [`train`] — AdamW pretraining loop
//! - [`ckpt`] — bit-exact checkpoint persistence

pub mod ckpt;
pub mod data;
pub mod diff;
pub mod modality;
pub mod model;
pub mod objectives;
pub mod surgery;
pub mod train;

pub use modality::Modality;
