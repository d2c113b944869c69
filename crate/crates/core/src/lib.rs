//! Two-scale homogenization of a double-porosity poroelastic medium.
//!
//! Periodic cell problems on voxel geometries give the crack permeability
//! and the skeleton stiffness; the macroscopic solvers then integrate the
//! homogenized filtration system and its rigid-skeleton limit.

pub mod cellgeom;
pub mod elasticell;
pub mod error;
pub mod fem;
pub mod linsolve;
pub mod macrosolve;
pub mod stokescell;
pub mod tensor;
pub mod upscale;

pub use error::{Error, Result};
