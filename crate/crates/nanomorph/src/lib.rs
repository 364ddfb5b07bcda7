//! Simulation and fitting toolkit for the 3D nanomorphology of two-phase
//! (polymer/ZnO) composite layers.
//!
//! The foreground phase is modeled on two scales. The macro scale stacks 2D
//! elliptical Matérn cluster processes into a Markov chain of slices (births,
//! deaths, rigid displacements), assigns gamma-distributed radii to the points
//! through a moving-average marking, and rasterizes the resulting spheres into
//! a voxel grid. The micro scale corrects that grid with small misspecification
//! clusters outside the phase, a shell-wise boundary removal, and hard-core
//! interior holes. Model parameters are fitted by a weighted minimum-contrast
//! grid search over summary statistics, and morphologies are validated
//! physically by solving a steady-state exciton diffusion equation and
//! computing the quenching efficiency.

pub mod error;
pub mod fit;
pub mod grid;
pub mod io;
pub mod marks;
pub mod micro;
pub mod physics;
pub mod pointproc;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{Sphere, VoxelGrid};
pub use seed::MasterSeed;
