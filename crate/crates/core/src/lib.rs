//! Factor matchings between two point processes on a discretized torus.
//!
//! The pipeline allocates grid sites to the points of each process in
//! equal-capacity cells, joins two points of opposite processes when their
//! cells overlap, weighs the edge by the overlap size, and rounds the
//! resulting fractional perfect matching to a perfect matching with exact
//! integer cycle rotations. The remaining modules supply baseline matchings,
//! the hyperfiniteness witness construction and ensemble tail statistics.

pub mod allocation;
pub mod baselines;
pub mod error;
pub mod fractional;
pub mod point_process;
pub mod tail;
pub mod torus;
pub mod witness;

pub use error::{Error, Result};
