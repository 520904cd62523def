//! Quadratic second-order-cone programs and a dense primal-dual
//! interior-point solver.
//!
//! Programs are assembled with [`ConicProgram`] from affine [`LinExpr`]s.
//! Each constraint carries a string handle so multipliers can be looked up
//! after [`solve`] without tracking row positions.
//!
//! ```
//! use flexmarket_conic::{solve, ConicProgram, LinExpr, SolverSettings};
//!
//! let mut p = ConicProgram::new();
//! let x = p.add_var("x");
//! p.add_quadratic_cost(x, 1.0);
//! p.add_nonneg("lower", LinExpr::var(x) - 1.0).unwrap();
//! let sol = solve(&p, &SolverSettings::default()).unwrap();
//! assert!((sol.x[0] - 1.0).abs() < 1e-7);
//! assert!((sol.dual_of("lower").unwrap()[0] - 2.0).abs() < 1e-6);
//! ```

mod cone;
mod dump;
mod expr;
mod ipm;
mod program;
mod solution;

pub use dump::write_program;
pub use expr::{LinExpr, Var};
pub use ipm::{solve, SolverSettings};
pub use program::{ConeConstraint, ConeKind, ConicProgram, ConstraintId, Equality};
pub use solution::{ConicSolution, IterationLog, Residuals, SolveStatus};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProgramError {
    #[error("constraint handle `{0}` is already registered")]
    DuplicateHandle(String),
    #[error("constraint `{handle}` references variable {index}, which does not exist")]
    UnknownVariable { handle: String, index: usize },
    #[error("non-finite coefficient in `{0}`")]
    NonFinite(String),
    #[error("cone constraint `{0}` has no rows")]
    EmptyCone(String),
    #[error("quadratic cost {coef} on `{var}` is not convex")]
    NotConvex { var: String, coef: f64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("initial KKT system is singular (redundant equalities or free variables without cost)")]
    SingularStart,
    #[error("no constraint registered under handle `{0}`")]
    UnknownHandle(String),
}
