//! Lifting 2d human joint positions to 3d with a residual multilayer network.
//!
//! The crate covers the whole pipeline: camera geometry and normalization,
//! a synthetic mocap generator and dataset files, a from-scratch network with
//! hand-written backward passes, Adam training with max-norm projection, and
//! the evaluation protocols (root-aligned and rigidly aligned MPJPE), noise
//! sweeps and ablations.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod pipeline;

pub use error::{Error, ErrorClass, Result};
pub use numerics::{Matrix, Rng};
