//! branchlab: simulation and numerical-spectral toolkit for branching Markov
//! processes.
//!
//! The crate is organized around a handful of engines:
//!
//! - [`law`] / [`rng`] / [`trace`]: shared domain types (offspring laws,
//!   reproducible random sources, population traces).
//! - [`gw`]: exact single-type Galton-Watson extinction probabilities, used as
//!   ground truth by the Monte Carlo estimators.
//! - [`bmc`]: discrete-time branching Markov chains on countable state spaces
//!   (exact moment iteration and population simulation).
//! - [`spectral`]: spectral radius via finite truncations, growth-slope
//!   estimates of the expected-population exponent, and test-function
//!   certificates for lower bounds.
//! - [`bmp`]: continuous-time branching diffusions / CTMCs with boundary
//!   killing, plus the discrete-time minorizing skeleton construction.
//! - [`fkpp`]: 1-D semilinear reaction-diffusion solvers (time-dependent and
//!   stationary) and the product-duality cross-check against the particle
//!   simulator.
//! - [`repro`]: exact-arithmetic constructions of three benchmark scenarios
//!   (a layered mutation graph, an interval-switching potential, and a
//!   critical drift-diffusion example).

pub mod bmc;
pub mod bmp;
pub mod config;
pub mod error;
pub mod fkpp;
pub mod gw;
pub mod law;
pub mod pde1d;
pub mod repro;
pub mod rng;
pub mod spectral;
pub mod trace;

pub use error::{Error, Result};
pub use law::{OffspringLaw, Placement, StateIndex};
pub use rng::RandomSource;
pub use trace::{PopulationTrace, SurvivalEstimate, Terminator};
