//! Epidemic models with infection-age dependent random infectivity.
//!
//! The crate pairs an exact event-driven simulator of the finite population
//! ([`abm`]) with a solver for its deterministic large-population limit
//! ([`limit_solver`]), the age-structured density view of that limit
//! ([`pde`]), and equilibrium/threshold functionals ([`analysis`]).
//! [`harness`] ties them together into convergence experiments and an
//! invariant battery.

pub mod error;
pub mod quadrature;
pub mod rng;

pub mod lifetime;
pub mod infectivity;

pub mod abm;
pub mod limit_solver;
pub mod pde;
pub mod analysis;

pub mod config;
pub mod export;
pub mod harness;

pub use error::{Error, Result};
pub use infectivity::{InfectivityLaw, InfectivityProfile, RateCurve};
pub use lifetime::{Continuity, Hazard, LifetimeDistribution, LifetimeKind};
