//! Local geometry of sampled manifolds: intrinsic dimension by PCA, Riemann and
//! sectional curvature from a fitted second fundamental form, SVD-based
//! derivative images, synthetic ground-truth patches, and two-manifold comparison.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod augment;
pub mod compare;
pub mod curvature;
pub mod error;
mod linalg;
pub mod patch;
pub mod synth;
pub mod tangent;

pub use error::{Error, Result};
pub use linalg::numerical_rank;
pub use patch::{ImageMatrix, Patch, PatchMeta};
