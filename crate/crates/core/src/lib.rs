#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Ewald message passing for atomistic graph networks.
//!
//! Long-range interactions are handled in Fourier space: structure factor
//! embeddings are filtered by learned frequency filters and scattered back to
//! the atoms, alongside a distance-cutoff continuous-filter convolution. The
//! [`coulomb`] module provides classical Ewald and direct-sum oracles that
//! validate the frequency-truncation machinery.

pub mod coulomb;
pub mod error;
pub mod filters;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod structure_factor;

pub use error::{Error, Result};
