//! Numerical laboratory for the PushASEP interacting particle system.
//!
//! PushASEP combines TASEP-style right jumps (blocked by an occupied
//! neighbor) with left jumps that push every blocking neighbor one site
//! further left. The crate provides
//!
//! * exact finite-time transition probabilities as determinants of
//!   contour-integral coefficients ([`transition`]),
//! * space-like-path correlation kernels for step, flat, and
//!   particle-dependent rates ([`kernels`]),
//! * Fredholm determinants for joint distributions, discrete and
//!   continuum ([`fredholm`]),
//! * the Airy function, extended Airy kernels, and the scaling maps of
//!   the KPZ limit ([`limits`]),
//! * an exact continuous-time Monte Carlo simulator ([`simulator`]).

pub mod contour;
pub mod fredholm;
pub mod kernels;
pub mod limits;
pub mod linalg;
pub mod simulator;
pub mod stats;
pub mod transition;
