//! Sampling Bayesian posteriors with discretised Hamiltonian SDEs, and the
//! machinery to measure how far each discretisation's stationary law is from
//! the true posterior.

pub mod analytic_toy;
pub mod batching;
pub mod chain;
pub mod error;
pub mod geometry;
pub mod integrators;
pub mod metrics;
pub mod operator_lab;
pub mod phase_space;
pub mod potentials;
pub mod reference;

pub use error::{Error, Result};
