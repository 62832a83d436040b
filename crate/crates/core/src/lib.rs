//! Grounds natural-language queries to object-level 3D masks over
//! Gaussian-splat scenes.
//!
//! The pipeline trains a per-Gaussian instance feature field ([`field`]),
//! asks an image-level grounding backend about a handful of well-chosen
//! views ([`lmseg`]), votes on the target instance and refines the lifted
//! 3D mask against per-view 2D masks ([`glspag`]). Grounded objects can be
//! removed or recolored ([`edit`]); [`eval`] holds the metrics, a synthetic
//! scene generator and the benchmark harness.

pub mod config;
pub mod edit;
pub mod error;
pub mod eval;
pub mod field;
pub mod glspag;
pub mod imageio;
pub mod lmseg;
pub mod render;
pub mod scene;

pub use error::{Error, Result};
