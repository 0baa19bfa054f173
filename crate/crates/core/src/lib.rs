//! Mean-field equilibrium of an exponential-utility market with an
//! unobserved, filtered risk premium: coefficient ODEs, filter, and a Monte
//! Carlo engine for the agent population.
//!
//! Every numerical routine is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the usual double-precision instantiation.

// `!(x > 0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod rng;
pub mod scalar;
pub mod scenario;
pub mod simulate;

pub use error::{Error, Result};
pub use scalar::Real;

pub type TimeGrid = model::TimeGrid<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type TerminalLiability = model::TerminalLiability<f64>;
pub type AgentPopulation = model::AgentPopulation<f64>;
pub type RiccatiSolution = riccati::RiccatiSolution<f64>;
pub type ThetaPrior = equilibrium::ThetaPrior<f64>;
pub type ThetaCoefficients = equilibrium::ThetaCoefficients<f64>;
pub type MarketPath = simulate::MarketPath<f64>;
pub type AgentEnsemble = simulate::AgentEnsemble<f64>;
