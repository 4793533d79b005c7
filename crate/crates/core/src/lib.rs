//! Equivariant graph forecaster for multi-agent pedestrian trajectories.
//!
//! Observed tracks are encoded in the scene's centroid frame, enriched with
//! rotation-invariant speed and heading features, and refined by rounds of
//! message passing whose coordinate updates commute with planar rotations
//! and translations. A frozen image embedding of the environment enters
//! every message through a learned projection.

pub mod checks;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod numerics;
pub mod scene;
pub mod training;

pub use error::{Error, Result};
