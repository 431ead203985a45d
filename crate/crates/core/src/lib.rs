//! p-adic hierarchy codes and van der Put digit-head models.
//!
//! Leaves of a finite rooted tree are encoded as fixed-length base-p digit
//! strings whose valuation metric reproduces the tree's LCA depths exactly.
//! A per-depth digit-head model learns to route codes root to leaf and is
//! trained with derivative-free (GIST) or projected-Adam VAPO updates. The
//! [`metrics`] module audits the structural properties of the result.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]

extern crate alloc;

pub mod error;
pub mod hierarchy;
pub mod metrics;
pub mod model;
pub mod padic;
pub mod rng;
pub mod vapo;

pub use error::{Error, Result};
pub use hierarchy::{EncodedDataset, NodeId, Record, TreeSpec};
pub use padic::{Ball, CodecParams, PadicCode};
