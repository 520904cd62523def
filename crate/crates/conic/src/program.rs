use std::collections::HashMap;
use std::sync::Arc;

use crate::expr::{LinExpr, Var};
use crate::ProgramError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConeKind {
    /// Each row must be nonnegative.
    NonNeg,
    /// First row `v`, remaining rows `u`: `‖u‖₂ ≤ v`.
    SecondOrder,
}

/// Stable reference to a registered constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintId {
    Equality(usize),
    Cone(usize),
}

#[derive(Debug, Clone)]
pub struct Equality {
    pub(crate) handle: String,
    /// Linear part only; the constant has been moved into `rhs`.
    pub(crate) lhs: LinExpr,
    pub(crate) rhs: f64,
}

impl Equality {
    pub fn handle(&self) -> &str {
        &self.handle
    }
    pub fn lhs(&self) -> &LinExpr {
        &self.lhs
    }
    pub fn rhs(&self) -> f64 {
        self.rhs
    }
}

#[derive(Debug, Clone)]
pub struct ConeConstraint {
    pub(crate) handle: String,
    pub(crate) kind: ConeKind,
    /// Slack rows: `s = [rows evaluated at x] ∈ K`.
    pub(crate) rows: Vec<LinExpr>,
}

impl ConeConstraint {
    pub fn handle(&self) -> &str {
        &self.handle
    }
    pub fn kind(&self) -> ConeKind {
        self.kind
    }
    pub fn rows(&self) -> &[LinExpr] {
        &self.rows
    }
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Distance of the evaluated slack from the cone boundary (negative when
    /// the point is outside the cone).
    pub fn margin(&self, x: &[f64]) -> f64 {
        let s: Vec<f64> = self.rows.iter().map(|r| r.eval(x)).collect();
        match self.kind {
            ConeKind::NonNeg => s.iter().copied().fold(f64::INFINITY, f64::min),
            ConeKind::SecondOrder => s[0] - s[1..].iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// Quadratic second-order-cone program in builder form:
///
/// ```text
/// minimize    Σ qⱼ·xⱼ² + Σ cⱼ·xⱼ + c₀
/// subject to  aᵢᵀx = bᵢ                 (equalities)
///             [rows of block k](x) ∈ Kₖ  (nonnegative orthant or second-order cone)
/// ```
///
/// Every constraint is registered under a unique string handle; duals are
/// retrieved by handle, never by position.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    names: Vec<String>,
    quad: Vec<f64>,
    lin: Vec<f64>,
    obj_const: f64,
    equalities: Vec<Equality>,
    cones: Vec<ConeConstraint>,
    handles: Arc<HashMap<String, ConstraintId>>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> Var {
        self.names.push(name.into());
        self.quad.push(0.0);
        self.lin.push(0.0);
        Var(self.names.len() - 1)
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.names[v.0]
    }

    pub fn var_names(&self) -> &[String] {
        &self.names
    }

    /// Adds `coef·v²` to the objective. `coef` must be nonnegative.
    pub fn add_quadratic_cost(&mut self, v: Var, coef: f64) {
        self.quad[v.0] += coef;
    }

    /// Adds an affine expression to the objective.
    pub fn add_linear_cost(&mut self, e: &LinExpr) {
        for &(j, a) in &e.terms {
            self.lin[j] += a;
        }
        self.obj_const += e.constant;
    }

    pub fn quadratic_costs(&self) -> &[f64] {
        &self.quad
    }

    pub fn linear_costs(&self) -> &[f64] {
        &self.lin
    }

    pub fn objective_constant(&self) -> f64 {
        self.obj_const
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.quad
            .iter()
            .zip(&self.lin)
            .zip(x)
            .map(|((q, c), xj)| q * xj * xj + c * xj)
            .sum::<f64>()
            + self.obj_const
    }

    fn register(&mut self, handle: String, id: ConstraintId) -> Result<(), ProgramError> {
        let map = Arc::make_mut(&mut self.handles);
        if map.contains_key(&handle) {
            return Err(ProgramError::DuplicateHandle(handle));
        }
        map.insert(handle, id);
        Ok(())
    }

    fn check_expr(&self, handle: &str, e: &LinExpr) -> Result<(), ProgramError> {
        if let Some(j) = e.max_index() {
            if j >= self.num_vars() {
                return Err(ProgramError::UnknownVariable {
                    handle: handle.to_string(),
                    index: j,
                });
            }
        }
        if !e.constant.is_finite() || e.terms.iter().any(|&(_, a)| !a.is_finite()) {
            return Err(ProgramError::NonFinite(handle.to_string()));
        }
        Ok(())
    }

    /// Registers `lhs = rhs`. The reported dual is `∂(optimal value)/∂rhs`.
    pub fn add_eq(
        &mut self,
        handle: impl Into<String>,
        mut lhs: LinExpr,
        rhs: f64,
    ) -> Result<ConstraintId, ProgramError> {
        let handle = handle.into();
        self.check_expr(&handle, &lhs)?;
        lhs.compact();
        let rhs = rhs - lhs.constant;
        lhs.constant = 0.0;
        let id = ConstraintId::Equality(self.equalities.len());
        self.register(handle.clone(), id)?;
        self.equalities.push(Equality { handle, lhs, rhs });
        Ok(id)
    }

    /// Registers `expr ≥ 0`. The reported dual is the nonnegative multiplier,
    /// equal to `−∂(optimal value)/∂(constant of expr)`.
    pub fn add_nonneg(
        &mut self,
        handle: impl Into<String>,
        expr: LinExpr,
    ) -> Result<ConstraintId, ProgramError> {
        self.add_cone(handle.into(), ConeKind::NonNeg, vec![expr])
    }

    /// Registers `‖u‖₂ ≤ t`. Rows of `u` that are identically zero are
    /// dropped; if none remain the constraint is stored as `t ≥ 0`.
    pub fn add_soc(
        &mut self,
        handle: impl Into<String>,
        t: LinExpr,
        u: Vec<LinExpr>,
    ) -> Result<ConstraintId, ProgramError> {
        let mut rows = Vec::with_capacity(u.len() + 1);
        rows.push(t);
        for mut r in u {
            r.compact();
            if !r.terms.is_empty() || r.constant != 0.0 {
                rows.push(r);
            }
        }
        let kind = if rows.len() == 1 {
            ConeKind::NonNeg
        } else {
            ConeKind::SecondOrder
        };
        self.add_cone(handle.into(), kind, rows)
    }

    fn add_cone(
        &mut self,
        handle: String,
        kind: ConeKind,
        mut rows: Vec<LinExpr>,
    ) -> Result<ConstraintId, ProgramError> {
        if rows.is_empty() {
            return Err(ProgramError::EmptyCone(handle));
        }
        for r in &mut rows {
            self.check_expr(&handle, r)?;
            r.compact();
        }
        let id = ConstraintId::Cone(self.cones.len());
        self.register(handle.clone(), id)?;
        self.cones.push(ConeConstraint { handle, kind, rows });
        Ok(id)
    }

    pub fn equalities(&self) -> &[Equality] {
        &self.equalities
    }

    pub fn cones(&self) -> &[ConeConstraint] {
        &self.cones
    }

    pub fn lookup(&self, handle: &str) -> Option<ConstraintId> {
        self.handles.get(handle).copied()
    }

    pub(crate) fn handle_map(&self) -> Arc<HashMap<String, ConstraintId>> {
        Arc::clone(&self.handles)
    }

    /// Checks structural invariants: PSD objective, finite data, consistent
    /// dimensions and a `v` row on every second-order block.
    pub fn validate(&self) -> Result<(), ProgramError> {
        for (j, &q) in self.quad.iter().enumerate() {
            if !(q >= 0.0) || !q.is_finite() {
                return Err(ProgramError::NotConvex {
                    var: self.names[j].clone(),
                    coef: q,
                });
            }
        }
        if self.lin.iter().any(|c| !c.is_finite()) || !self.obj_const.is_finite() {
            return Err(ProgramError::NonFinite("objective".into()));
        }
        for e in &self.equalities {
            self.check_expr(&e.handle, &e.lhs)?;
            if !e.rhs.is_finite() {
                return Err(ProgramError::NonFinite(e.handle.clone()));
            }
        }
        for c in &self.cones {
            if c.rows.is_empty() || (c.kind == ConeKind::SecondOrder && c.rows.len() < 2) {
                return Err(ProgramError::EmptyCone(c.handle.clone()));
            }
            for r in &c.rows {
                self.check_expr(&c.handle, r)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_handles_rejected() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        p.add_nonneg("c", LinExpr::var(x)).unwrap();
        let err = p.add_nonneg("c", LinExpr::var(x) - 1.0).unwrap_err();
        assert!(matches!(err, ProgramError::DuplicateHandle(h) if h == "c"));
    }

    #[test]
    fn soc_without_u_becomes_orthant() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        let id = p
            .add_soc("c", LinExpr::var(x), vec![LinExpr::zero(), LinExpr::zero()])
            .unwrap();
        let ConstraintId::Cone(k) = id else { panic!() };
        assert_eq!(p.cones()[k].kind(), ConeKind::NonNeg);
        assert_eq!(p.cones()[k].dim(), 1);
    }

    #[test]
    fn equality_constant_moves_to_rhs() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        p.add_eq("e", LinExpr::var(x) + 2.0, 5.0).unwrap();
        assert_eq!(p.equalities()[0].rhs(), 3.0);
    }

    #[test]
    fn negative_quadratic_is_rejected() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        p.add_quadratic_cost(x, -1.0);
        assert!(matches!(p.validate(), Err(ProgramError::NotConvex { .. })));
    }

    #[test]
    fn unknown_variable_is_rejected() {
        let mut p = ConicProgram::new();
        p.add_var("x");
        let err = p.add_nonneg("c", LinExpr::var(Var(4))).unwrap_err();
        assert!(matches!(err, ProgramError::UnknownVariable { index: 4, .. }));
    }
}
