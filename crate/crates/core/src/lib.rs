//! Numerical laboratory for finite-time blow-up of a two-component semilinear
//! SPDE system driven by a Brownian motion `W` and a fractional Brownian
//! motion `B^H`.
//!
//! The crate is organised bottom-up:
//!
//! * [`noise`] samples `W` and `B^H` on a uniform grid, independently or
//!   through the Volterra representation `B^H(t) = ∫ K_H(t,s) dW(s)`.
//! * [`params`] validates a [`SystemParams`] and computes every derived
//!   constant and stopping threshold.
//! * [`stopping`] evaluates exponential functionals along a path and their
//!   first threshold crossings (lower and upper bounds on the blow-up time).
//! * [`pde`] integrates the transformed random PDE system directly and
//!   detects numerical blow-up.
//! * [`prob`] evaluates the analytic blow-up probability bounds.
//! * [`mc`] runs seeded, parallel, reproducible Monte Carlo campaigns.
//! * [`validation`] is a reduced-scale self check used by the CLI.

// NaN-rejecting guards are written as `!(x > 0.0)`; index loops mirror
// the two symmetric components
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod mc;
pub mod noise;
pub mod numerics;
pub mod params;
pub mod pde;
pub mod prob;
pub mod special;
pub mod stopping;
pub mod validation;

pub use error::{Error, Result};
pub use mc::{CampaignReport, CampaignSpec, Pipeline};
pub use noise::{NoiseCoupling, SamplePath, TimeGrid};
pub use params::{DerivedConstants, EigenPair, InitialData, SystemParams, Thresholds};
pub use pde::{PdeTrajectory, SolverControls, SpatialMesh};
pub use stopping::{ExpFunctionalSpec, StoppingEstimate};

/// Crate version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
