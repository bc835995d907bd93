//! Numerical laboratory for an attenuated normal operator of the geodesic
//! X-ray transform on convexly foliated 3-d domains: geometry and tracing,
//! forward transform, the localized/conjugated normal operator, its symbol
//! calculus, iterative inversion, and a reproducible experiment harness.

pub mod config;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod inversion;
pub mod io;
pub mod modnormal;
pub mod quadrature;
pub mod runner;
pub mod symbolcalc;
pub mod transform;

pub use error::{Error, Result};
