//! Stochastic heat equation on `[0, 1]` with Neumann boundaries, space-time
//! white noise and a stationary ergodic random drift `DV + B`.
//!
//! The crate simulates the discretised equation over nested ensembles of
//! environments and noise realisations, and measures the long-time Gaussian
//! behaviour of `u(t)/sqrt(t)`: concentration on constant functions, the
//! effective variance `a^2` with its bounds `C <= a^2 <= 1`, a variational
//! upper bound for gradient environments, and the enhancement due to a
//! divergence-free drift.
//!
//! Modules, bottom-up:
//!
//! * [`lattice`]: grid, Neumann Laplacian, cosine transform, discrete Wiener measure.
//! * [`environment`]: potentials `V`, the divergence-free drift `B`, validators.
//! * [`dynamics`]: semi-implicit and exact free-field integrators.
//! * [`ensemble`]: reproducible environment x noise Monte Carlo and CLT statistics.
//! * [`diffusivity`]: estimators and bounds for `a^2`.
//! * [`cli`]: JSON-configured experiment pipeline behind the `rse-heat` binary.

pub mod cli;
pub mod diffusivity;
pub mod dynamics;
pub mod ensemble;
pub mod environment;
pub mod error;
pub mod lattice;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
pub use lattice::{Field, Grid};
