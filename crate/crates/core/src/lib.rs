//! Numerical laboratory for the Mabuchi K-energy on torus-invariant metrics
//! of the Riemann sphere and for weighted Bergman kernels on the disc.

pub mod bergman;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod geodesics;
pub mod numerics;
pub mod radial_geometry;
pub mod symmetry;

pub use error::{Error, Result};
pub use radial_geometry::{MetricDensity, RadialPotential, SymplecticPotential};
