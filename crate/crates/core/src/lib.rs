//! Simulation and certification toolkit for scalar delay differential
//! equations with fixed-time impulses.
//!
//! The state decays at a time-varying rate, is fed by saturating production
//! terms with discrete and kernel-weighted delays, loses mass to a Lipschitz
//! removal term, and jumps at scheduled instants: the stored value at an
//! instant is the left limit, and integration restarts from
//! `(1 + gamma) * x + delta`.
//!
//! Modules build on each other in this order:
//!
//! - [`expr`]: closed-form coefficient expressions (parse, evaluate, bound);
//! - [`grid`]: grid functions with one-sided values at breakpoints;
//! - [`model`]: validated model configs and impulse-schedule arithmetic;
//! - [`cauchy`]: evolution weights of the linear part and jump-product
//!   extrema;
//! - [`sim`]: Runge-Kutta integration with dense output across jumps;
//! - [`analyze`]: invariant-band constants, contraction estimates, verdicts;
//! - [`fixpoint`]: Picard iteration for the bounded recurrent solution;
//! - [`halanay`]: decay-rate certificates and empirical rate fits.

pub mod analyze;
pub mod cauchy;
pub mod expr;
pub mod fixpoint;
pub mod grid;
pub mod halanay;
pub mod model;
pub mod presets;
pub(crate) mod quad;
pub mod sim;
