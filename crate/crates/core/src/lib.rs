//! Multi-object deformed implicit fields.
//!
//! Per-category signed-distance sub-functions (template field, hyper-network
//! and deformation field) coupled by a cross-category refinement network,
//! trained with contact-aware supervision. The crate covers data preparation,
//! the networks and their losses, both optimization phases, explicit geometry
//! extraction, dense correspondence and reconstruction metrics.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod rng;
pub mod screw_series;
pub mod tape;

pub mod evaluation;
pub mod field;
pub mod objectives;
pub mod optimization;
pub mod reconstruction_geometry;
pub mod shape_data;
pub mod synthetic_scenes;

pub use error::{Error, Result};
