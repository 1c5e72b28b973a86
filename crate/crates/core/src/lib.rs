#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

//! Numerics for the coupled Ricci / harmonic-map heat flow on periodic grids
//! and on homogeneous models.

pub mod error;
pub mod fixtures;
pub mod grid;
pub mod flow;
pub mod functionals;
pub mod homogeneous;
pub mod io;
pub mod monitors;
pub mod reduced_volume;
pub mod report;
pub mod schedule;

pub use error::{Result, RhError};
