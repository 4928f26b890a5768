//! Multiscale topology optimization of functionally graded beam lattices.
//!
//! The pipeline runs from a periodic Delaunay beam lattice (`rve`), through
//! homogenization and isotropic projection (`isotropy`), a relative density
//! map (`densmap`) and a physics-augmented neural surrogate (`pann`), to a
//! two-field optimality-criteria optimizer on a structured grid (`optimizer`,
//! `fe`).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod densmap;
pub mod dual;
pub mod error;
pub mod fe;
pub mod isotropy;
pub mod optimizer;
pub mod pann;
pub mod rve;
mod simd;
pub mod voigt;

pub use densmap::{DensitySample, SigmoidFit};
pub use error::{Error, Result};
pub use fe::{GridModel, LinearSystem};
pub use optimizer::{DesignField, OptConfig, OptRun};
pub use pann::{CholeskyPair, MaterialNet, TrainingSet};
pub use rve::{BeamMaterial, RveModel};
pub use voigt::VoigtStiffness;
