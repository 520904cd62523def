use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::program::ConstraintId;
use crate::SolveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

/// Relative KKT residuals of a primal-dual point, measured on the unscaled
/// program with infinity norms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residuals {
    /// `max(‖Ax − b‖/max(1,‖b‖), ‖Gx + s − h‖/max(1,‖h‖))`
    pub primal: f64,
    /// `‖Px + q + Aᵀy + Gᵀz‖/max(1,‖q‖)`
    pub dual: f64,
    /// `sᵀz / max(1, |primal objective|)`
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

/// Per-iteration trace entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    pub history: Vec<IterationLog>,
    /// `∂(optimal value)/∂rhs` per equality, in registration order.
    pub(crate) eq_duals: Vec<f64>,
    /// Cone multipliers `z ∈ K*` per cone constraint.
    pub(crate) cone_duals: Vec<Vec<f64>>,
    /// Slack values `s ∈ K` per cone constraint.
    pub(crate) cone_slacks: Vec<Vec<f64>>,
    pub(crate) handles: Arc<HashMap<String, ConstraintId>>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Multiplier(s) registered under `handle`.
    ///
    /// Equalities return one value, the sensitivity of the optimal value to the
    /// right-hand side. Cone constraints return the full dual block (one entry
    /// for an orthant row; `(z_v, z_u…)` for a second-order block).
    pub fn dual_of(&self, handle: &str) -> Result<&[f64], SolveError> {
        match self.handles.get(handle) {
            None => Err(SolveError::UnknownHandle(handle.to_string())),
            Some(ConstraintId::Equality(i)) => Ok(std::slice::from_ref(&self.eq_duals[*i])),
            Some(ConstraintId::Cone(k)) => Ok(&self.cone_duals[*k]),
        }
    }

    /// Slack `s` of a cone constraint at the returned point.
    pub fn slack_of(&self, handle: &str) -> Result<&[f64], SolveError> {
        match self.handles.get(handle) {
            Some(ConstraintId::Cone(k)) => Ok(&self.cone_slacks[*k]),
            Some(ConstraintId::Equality(_)) => Ok(&[]),
            None => Err(SolveError::UnknownHandle(handle.to_string())),
        }
    }

    pub fn equality_duals(&self) -> &[f64] {
        &self.eq_duals
    }

    pub fn cone_duals(&self) -> &[Vec<f64>] {
        &self.cone_duals
    }
}
