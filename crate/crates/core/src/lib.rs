//! Uncertainty estimation for out-of-distribution detection in graph classification.
//!
//! The crate is organised around the leave-one-class-out benchmark:
//!
//! - [`graph`]: graph datasets, the TU text format, a verified TRIANGLES generator and splits.
//! - [`encoder`]: a GCN encoder with mean pooling and a linear head, trained with Adam.
//! - [`density`]: Gaussian KDE and radial normalizing flows.
//! - [`uq`]: the five estimators (`single`, `mc`, `de`, `nuq`, `natpn`).
//! - [`protocol`]: AUROC, the per-class experiment loop, confusion and distance matrices.
//!
//! Data-parallel loops go through [`par::Exec`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod density;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod par;
pub mod protocol;
pub mod rng;
pub mod uq;

pub use error::{Error, Result};
