//! Homogenisation of slow/fast systems driven by fractional noise.
//!
//! The crate is organised bottom-up:
//!
//! * [`noise`] samples the fast stationary processes (fractional Gaussian
//!   noise, fractional Ornstein–Uhlenbeck, finite-state Markov chains) and
//!   splits them into past-measurable and independent parts.
//! * [`hermite`] expands observables in probabilists' Hermite polynomials and
//!   derives the rank, the critical exponent `H*(m)` and the scaling `α(ε)`.
//! * [`roughpath`] builds discrete rough-path lifts and measures them.
//! * [`solver`] integrates the multiscale ODE and the limiting rough/Young
//!   equations.
//! * [`decomp`] evaluates the martingale–coboundary decomposition of scaled
//!   additive functionals.
//! * [`lab`] orchestrates Monte Carlo experiments and statistical verdicts.

pub mod container;
pub mod decomp;
pub mod hermite;
pub mod lab;
pub mod noise;
pub mod quad;
pub mod rng;
pub mod roughpath;
pub mod solver;
pub mod stats;
