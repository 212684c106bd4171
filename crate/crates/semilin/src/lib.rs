//! Numerical laboratory for the semilinear parabolic equation
//! `u_t = u_xx - u^2 + phi(x)` on the real line: equilibria by
//! asymptotic-numeric matching, bifurcation diagrams in the potential
//! parameter, spectral unstable-dimension counts, heteroclinic orbits, and
//! blow-up experiments.

pub mod error;
pub mod equilibrium;
pub mod grid;
pub mod imex;
pub mod spectrum;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction, PotentialProfile};
pub use imex::{Reaction, Trajectory};
