//! Posterior estimation of a probability of failure for stochastic
//! multi-fidelity simulators.
//!
//! The model is a multi-fidelity Gaussian process with heteroscedastic,
//! level-wise noise and a fully-Bayesian treatment of its hyper-parameters:
//! a log-scale normal prior, adaptive Metropolis posterior sampling, and a
//! Monte-Carlo sampler of the induced posterior distribution of the
//! probability that the simulator output exceeds a critical threshold.
//! A random damped oscillator testbed, nested Latin hypercube designs and
//! a replicated-experiment harness reproduce the comparison between the
//! fully-Bayesian and MAP plug-in approaches.

pub mod amh;
pub mod design;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod kde;
pub mod kernel;
pub mod linalg;
pub mod oscillator;
pub mod pof;
pub mod prior;
pub mod rng;

pub use error::{Error, Result};
