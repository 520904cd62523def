//! Chance-constrained multi-period economic dispatch with multi-dimensional
//! flexibility (MDF) bids from load aggregators.
//!
//! The pipeline is: load a [`case::Case`], build the clearing program with
//! [`clearing::build_clearing`], solve it with the embedded conic solver,
//! read prices with [`pricing`] and check the chance constraints ex post with
//! [`validate`].
//!
//! ```
//! use flexmarket::case::Case;
//! use flexmarket::clearing::clear;
//! use flexmarket::grid::compute_ptdf;
//! use flexmarket_conic::SolverSettings;
//!
//! let case = Case::embedded("sixbus").unwrap();
//! let ptdf = compute_ptdf(&case.network, case.network.slack_bus).unwrap();
//! let (sol, _) = clear(&case.network, &ptdf, &case.wind, &case.risk, &[], &SolverSettings::default()).unwrap();
//! assert!(sol.objective > 0.0);
//! ```

pub mod bids;
pub mod case;
pub mod clearing;
pub mod grid;
pub mod pricing;
pub mod stochastic;
pub mod validate;

use flexmarket_conic::{ProgramError, SolveError, SolveStatus};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("{what} refers to bus {bus}, which does not exist")]
    DanglingBus { what: String, bus: usize },
    #[error("line {line} starts and ends at bus {bus}")]
    SelfLoop { line: usize, bus: usize },
    #[error("slack bus {0} is not in the network")]
    UnknownSlack(usize),
    #[error("network is disconnected; the reduced susceptance matrix is singular")]
    Disconnected,
}

#[derive(Debug, Error)]
pub enum StochasticError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("covariance of period {period} is not symmetric positive semidefinite")]
    NotPsd { period: usize },
    #[error("unknown distribution family `{0}`")]
    UnknownFamily(String),
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
}

#[derive(Debug, Error)]
pub enum BidError {
    #[error("bid at bus {bus}: {reason}")]
    Invalid { bus: usize, reason: String },
    #[error("acceptance at bus {bus} lies outside the bid box")]
    OutsideBox { bus: usize },
    #[error("bid at bus {bus}: window [{start}, {end}] outside 1..={horizon}")]
    Window { bus: usize, start: usize, end: usize, horizon: usize },
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("{path}: {message} at line {line} column {column}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unknown embedded case `{0}`")]
    UnknownCase(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Bid(#[from] BidError),
}

#[derive(Debug, Error)]
pub enum ClearingError {
    #[error("invalid risk parameters: {0}")]
    Risk(String),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Bid(#[from] BidError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("solver finished with status {0}")]
    NotOptimal(SolveStatus),
    #[error("solution violates {handle} by {violation:e}")]
    Inconsistent { handle: String, violation: f64 },
}

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("price profile is empty")]
    Empty,
    #[error("bus {0} is not in the price profile")]
    UnknownBus(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
