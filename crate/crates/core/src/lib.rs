//! Simulation and verification toolkit for stochastic flows of SDEs
//! `dX = b(t,X) dt + σ(t,X) dW` with super-linear or singular coefficients.

// `!(a > b)` is used deliberately so that NaN takes the failing branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod flow_regularity;
pub mod integrators;
pub mod lyapunov;
pub mod markov_stats;
pub mod occupation;
pub mod report;
pub mod rng;
pub mod stats;
pub mod svg;
pub mod zvonkin;

pub use error::{FlowError, Result};
