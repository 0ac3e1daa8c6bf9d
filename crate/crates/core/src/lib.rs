//! Body-surface pipeline for adipose tissue volume regression.
//!
//! The crate follows one subject from a binary whole-body segmentation to a
//! pair of predicted fat volumes:
//!
//! 1. [`volume`]: morphology on voxel grids, silhouettes, and a synthetic body
//!    generator with analytic visceral (VAT) and subcutaneous (ASAT) labels.
//! 2. [`surface`]: marching cubes, mesh statistics, and quadric-error decimation.
//! 3. [`register`]: rigid point-to-point ICP and reference subject selection.
//! 4. [`graph`]: meshes as regression graphs and block-diagonal batching.
//! 5. [`nn`]: GraphSAGE (mean aggregator), batch norm, pooling, MLP and a small
//!    silhouette CNN, all with hand-written backward passes.
//! 6. [`train`]: shrinkage loss, Adam, k-fold cross-validation and timing sweeps.
//!
//! All numerics are `f64`. Every stage is deterministic for a fixed seed.

pub mod error;
pub mod graph;
pub mod nn;
pub mod register;
pub mod surface;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
