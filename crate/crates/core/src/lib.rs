//! Radial simulation of `∂u/∂t = Δ(u^p)` with entropy, moment and
//! entropy-production diagnostics, checked against closed-form
//! Barenblatt references.

pub mod barenblatt;
pub mod error;
pub mod experiment;
pub mod functionals;
pub mod gn;
pub mod grid;
pub mod matching;
pub mod params;
pub mod quadrature;
pub mod solver;
pub mod timeseries;

pub use barenblatt::{reference_functionals, Barenblatt, BarenblattReference};
pub use error::{Error, Result};
pub use functionals::{diagnostics, FunctionalRecord};
pub use grid::{build_grid, project_initial, DensityState, RadialGrid};
pub use params::{derive_exponents, ExponentSet, ModelParams, Regime};
pub use solver::{Solver, SolverConfig, Trajectory};
