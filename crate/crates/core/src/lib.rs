//! A 2D unfitted (CutFEM) finite element workbench for the elliptic
//! interface problem with discontinuous diffusion.
//!
//! The pipeline: solve the Nitsche-stabilized primal problem on a
//! background mesh cut by a level set, compute local edge multipliers
//! from per-node patch systems, reconstruct a locally conservative
//! H(div)-conforming Raviart-Thomas flux, evaluate a posteriori error
//! estimators, and drive adaptive mesh refinement.

pub mod adaptive;
pub mod cut;
pub mod error;
pub mod estimator;
pub mod flux;
pub mod levelset;
pub mod mesh;
pub mod mesh_io;
pub mod mixed;
pub mod primal;
pub mod problem;
pub mod quadrature;
pub mod sparse;

pub use error::{Error, Result};
