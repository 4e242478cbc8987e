//! Seismic horizon segmentation toolkit.
//!
//! Trains U-Net-family networks on sparsely labeled 2D seismic sections,
//! predicts 3D probability volumes, filters them with density clustering,
//! fuses orthogonal predictions, and evaluates the reconstructed horizon
//! surfaces geometrically.

pub mod arch;
pub mod error;
pub mod geometry;
pub mod objectives;
pub mod postprocess;
pub mod reporting;
pub mod synthetics;
pub mod tensor;
pub mod trainer;
pub mod volume;

pub use error::{HorizonError, Result};
