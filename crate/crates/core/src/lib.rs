//! Sparse block-hashed volumetric mapping.
//!
//! Depth frames are fused into TSDF or occupancy layers (plus an optional
//! color layer); an ESDF and a triangle mesh are derived from them
//! incrementally, and the ESDF answers batched distance/gradient queries.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod esdf;
pub mod export;
pub mod integrate;
pub mod map;
pub mod mesh;
pub mod oracle;
pub mod pipeline;
pub mod query;
pub mod scene;
pub mod sensor;
pub mod voxels;
