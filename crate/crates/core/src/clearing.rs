//! Chance-constrained dispatch and flexibility-market clearing as a
//! second-order cone program.
//!
//! Decision variables per period `t`: generator set-points `P̄_g,t` and
//! participation factors `β_g,t`, aggregator set-points `P̄_f,t` and factors
//! `β_f,t` (service window only), and one acceptance `α` per bid. Realized
//! outputs follow the affine policy `P = P̄ − β·Ωₜ` where `Ωₜ = 1ᵀωₜ` is the
//! aggregate wind deviation.
//!
//! Every Gaussian chance constraint `P(Aᵀξ ≤ b) ≥ 1 − ε` becomes
//! `Φ⁻¹(1 − ε)·‖Σ^{1/2}A‖₂ ≤ b`.

use flexmarket_conic::{solve, ConicProgram, ConicSolution, LinExpr, SolveStatus, SolverSettings, Var};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bids::{validate_window, AcceptanceVars, MdfAcceptance, MdfBid, RewardFunction};
use crate::grid::{Network, PtdfMatrix};
use crate::pricing::{self, LmpProfile};
use crate::stochastic::{aggregate_stats, quantile_standard_normal, standard_normal_cdf, WindModel};
use crate::ClearingError;

/// Maximum allowed violation probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskParameters {
    /// Per generator.
    pub eps_gen: Vec<f64>,
    /// Per line.
    pub eps_line: Vec<f64>,
    /// Per bid (charging power).
    pub eps_power: Vec<f64>,
    /// Per bid (state of charge).
    pub eps_energy: Vec<f64>,
}

impl RiskParameters {
    pub fn uniform(network: &Network, num_bids: usize, gen: f64, line: f64, power: f64, energy: f64) -> Self {
        RiskParameters {
            eps_gen: vec![gen; network.generators.len()],
            eps_line: vec![line; network.lines.len()],
            eps_power: vec![power; num_bids],
            eps_energy: vec![energy; num_bids],
        }
    }

    /// Same generator and line levels, no aggregator entries.
    pub fn without_bids(&self) -> Self {
        RiskParameters {
            eps_power: Vec::new(),
            eps_energy: Vec::new(),
            ..self.clone()
        }
    }

    pub fn validate(&self, network: &Network, num_bids: usize) -> Result<(), ClearingError> {
        let groups = [
            ("eps_gen", &self.eps_gen, network.generators.len()),
            ("eps_line", &self.eps_line, network.lines.len()),
            ("eps_power", &self.eps_power, num_bids),
            ("eps_energy", &self.eps_energy, num_bids),
        ];
        for (name, v, n) in groups {
            if v.len() != n {
                return Err(ClearingError::Risk(format!("{name} has {} entries, expected {n}", v.len())));
            }
            if let Some(e) = v.iter().find(|e| !(**e > 0.0 && **e <= 0.5)) {
                return Err(ClearingError::Risk(format!("{name} value {e} outside (0, 0.5]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintClass {
    Generator,
    Line,
    VbPower,
    VbEnergy,
}

impl ConstraintClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintClass::Generator => "generator",
            ConstraintClass::Line => "line",
            ConstraintClass::VbPower => "vb_power",
            ConstraintClass::VbEnergy => "vb_energy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Upper,
    Lower,
}

/// Output of [`reformulate_chance`]: `‖u‖₂ ≤ t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocForm {
    pub t: LinExpr,
    pub u: Vec<LinExpr>,
    /// `Φ⁻¹(1 − ε)`
    pub kappa: f64,
    /// `Σ^{1/2}A`: the standard deviation of the random term is `‖std_rows‖₂`.
    pub std_rows: Vec<LinExpr>,
}

/// Deterministic equivalent of `P(a(X)ᵀξ ≤ b(X)) ≥ 1 − ε` for
/// `ξ ~ N(0, cov)`, given `cov_sqrt = cov^{1/2}`.
pub fn reformulate_chance(
    a: &[LinExpr],
    b: LinExpr,
    cov_sqrt: &DMatrix<f64>,
    eps: f64,
) -> Result<SocForm, ClearingError> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(ClearingError::Risk(format!("risk parameter {eps} outside (0, 0.5]")));
    }
    if cov_sqrt.nrows() != a.len() || cov_sqrt.ncols() != a.len() {
        return Err(ClearingError::Shape(format!(
            "covariance is {}×{} but A has {} entries",
            cov_sqrt.nrows(),
            cov_sqrt.ncols(),
            a.len()
        )));
    }
    let kappa = quantile_standard_normal(1.0 - eps)?;
    let mut std_rows = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        let mut row = LinExpr::zero();
        for (j, aj) in a.iter().enumerate() {
            let f = cov_sqrt[(i, j)];
            if f != 0.0 {
                row += &aj.clone().scale(f);
            }
        }
        row.compact();
        std_rows.push(row);
    }
    let u = std_rows.iter().map(|r| r.clone().scale(kappa)).collect();
    Ok(SocForm { t: b, u, kappa, std_rows })
}

/// One reformulated chance constraint and the data needed to evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanceRecord {
    pub handle: String,
    pub class: ConstraintClass,
    /// Generator, line or bid index (0-based).
    pub index: usize,
    pub side: Side,
    /// 0-based period.
    pub period: usize,
    pub eps: f64,
    pub kappa: f64,
    pub std_rows: Vec<LinExpr>,
    pub b: LinExpr,
}

impl ChanceRecord {
    /// `(b(X), ‖Σ^{1/2}A(X)‖)`.
    pub fn evaluate(&self, x: &[f64]) -> (f64, f64) {
        let b = self.b.eval(x);
        let sd = self.std_rows.iter().map(|r| r.eval(x).powi(2)).sum::<f64>().sqrt();
        (b, sd)
    }
}

/// Variable indices and constraint handles of a built program.
#[derive(Debug, Clone)]
pub struct DecisionLayout {
    /// 0-based periods covered, in program order.
    pub periods: Vec<usize>,
    /// `[g][k]` for `k` indexing `periods`.
    pub pg: Vec<Vec<Var>>,
    pub bg: Vec<Vec<Var>>,
    /// `[i][k]`, `None` outside the service window.
    pub pf: Vec<Vec<Option<Var>>>,
    pub bf: Vec<Vec<Option<Var>>>,
    pub alpha: Vec<AcceptanceVars>,
    pub balance: Vec<String>,
    pub participation: Vec<String>,
    /// `[l][k]`
    pub line_up: Vec<Vec<String>>,
    pub line_dn: Vec<Vec<String>>,
    pub chance: Vec<ChanceRecord>,
    pub network: Network,
    pub ptdf: PtdfMatrix,
    pub wind: WindModel,
    pub sigma: Vec<f64>,
    pub bids: Vec<MdfBid>,
    pub risk: RiskParameters,
}

fn build(
    network: &Network,
    ptdf: &PtdfMatrix,
    wind: &WindModel,
    risk: &RiskParameters,
    bids: &[MdfBid],
    periods: Vec<usize>,
) -> Result<(ConicProgram, DecisionLayout), ClearingError> {
    let horizon = network.horizon();
    if wind.horizon() != horizon {
        return Err(ClearingError::Shape(format!(
            "wind forecast has {} periods, loads have {horizon}",
            wind.horizon()
        )));
    }
    if wind.num_units() != network.wind_units.len() {
        return Err(ClearingError::Shape(format!(
            "wind forecast has {} units, network has {}",
            wind.num_units(),
            network.wind_units.len()
        )));
    }
    if network.generators.is_empty() {
        return Err(ClearingError::Shape("network has no generators".into()));
    }
    if ptdf.gamma.nrows() != network.lines.len() || ptdf.gamma.ncols() != network.num_buses() {
        return Err(ClearingError::Shape("PTDF does not match the network".into()));
    }
    let risk = &if bids.is_empty() { risk.without_bids() } else { risk.clone() };
    risk.validate(network, bids.len())?;
    for bid in bids {
        bid.validate()?;
        validate_window(bid, horizon)?;
        if !network.aggregator_buses.contains(&bid.bus) {
            return Err(ClearingError::Shape(format!("bid at bus {} has no aggregator", bid.bus)));
        }
    }
    for (i, bid) in bids.iter().enumerate() {
        if bids[..i].iter().any(|b| b.bus == bid.bus) {
            return Err(ClearingError::Shape(format!("more than one bid at bus {}", bid.bus)));
        }
    }
    let agg = aggregate_stats(wind)?;
    let sigma = agg.sigma.clone();

    let ng = network.generators.len();
    let nb = bids.len();
    let nk = periods.len();
    let mut p = ConicProgram::new();

    let mut pg = vec![Vec::with_capacity(nk); ng];
    let mut bg = vec![Vec::with_capacity(nk); ng];
    let mut pf = vec![Vec::with_capacity(nk); nb];
    let mut bf = vec![Vec::with_capacity(nk); nb];
    for &t in &periods {
        for g in 0..ng {
            pg[g].push(p.add_var(format!("Pg[{},{}]", g + 1, t + 1)));
            bg[g].push(p.add_var(format!("beta_g[{},{}]", g + 1, t + 1)));
        }
        for (i, bid) in bids.iter().enumerate() {
            if bid.active(t) {
                pf[i].push(Some(p.add_var(format!("Pf[{},{}]", bid.bus, t + 1))));
                bf[i].push(Some(p.add_var(format!("beta_f[{},{}]", bid.bus, t + 1))));
            } else {
                pf[i].push(None);
                bf[i].push(None);
            }
        }
    }
    let alpha: Vec<AcceptanceVars> = bids
        .iter()
        .map(|b| AcceptanceVars {
            r_minus: p.add_var(format!("alpha_r_minus[{}]", b.bus)),
            r_plus: p.add_var(format!("alpha_r_plus[{}]", b.bus)),
            e_minus: p.add_var(format!("alpha_e_minus[{}]", b.bus)),
            e_plus: p.add_var(format!("alpha_e_plus[{}]", b.bus)),
        })
        .collect();

    // Expected generation cost and rewards.
    for (k, &t) in periods.iter().enumerate() {
        for g in 0..ng {
            let (c2, c1, c0) = network.cost_pu(g);
            p.add_quadratic_cost(pg[g][k], c2);
            p.add_quadratic_cost(bg[g][k], c2 * sigma[t] * sigma[t]);
            p.add_linear_cost(&(LinExpr::term(pg[g][k], c1) + c0));
        }
    }
    for (bid, vars) in bids.iter().zip(&alpha) {
        p.add_linear_cost(&bid.reward_function().cost(vars));
    }

    // Acceptance boxes.
    for (bid, v) in bids.iter().zip(&alpha) {
        let b = bid.bus;
        let x = LinExpr::var;
        p.add_nonneg(format!("alpha_r_minus_lo[{b}]"), x(v.r_minus) - bid.r_min)?;
        p.add_nonneg(format!("alpha_r_minus_hi[{b}]"), -x(v.r_minus))?;
        p.add_nonneg(format!("alpha_r_plus_lo[{b}]"), x(v.r_plus))?;
        p.add_nonneg(format!("alpha_r_plus_hi[{b}]"), LinExpr::constant(bid.r_max) - x(v.r_plus))?;
        p.add_nonneg(format!("alpha_e_minus_lo[{b}]"), x(v.e_minus) - bid.e_min)?;
        p.add_nonneg(format!("alpha_e_minus_hi[{b}]"), -x(v.e_minus))?;
        p.add_nonneg(format!("alpha_e_plus_lo[{b}]"), x(v.e_plus))?;
        p.add_nonneg(format!("alpha_e_plus_hi[{b}]"), LinExpr::constant(bid.e_max) - x(v.e_plus))?;
    }

    let mut balance = Vec::with_capacity(nk);
    let mut participation = Vec::with_capacity(nk);
    let mut chance = Vec::new();
    let nl = network.lines.len();
    let mut line_up = vec![Vec::with_capacity(nk); nl];
    let mut line_dn = vec![Vec::with_capacity(nk); nl];

    let mut add_chance = |p: &mut ConicProgram,
                          handle: String,
                          class: ConstraintClass,
                          index: usize,
                          side: Side,
                          period: usize,
                          eps: f64,
                          a: &[LinExpr],
                          cov_sqrt: &DMatrix<f64>,
                          b: LinExpr|
     -> Result<(), ClearingError> {
        let form = reformulate_chance(a, b, cov_sqrt, eps)?;
        p.add_soc(handle.clone(), form.t.clone(), form.u)?;
        chance.push(ChanceRecord {
            handle,
            class,
            index,
            side,
            period,
            eps,
            kappa: form.kappa,
            std_rows: form.std_rows,
            b: form.t,
        });
        Ok(())
    };

    for (k, &t) in periods.iter().enumerate() {
        let sig = DMatrix::from_element(1, 1, sigma[t]);

        // Power balance in expectation.
        let mut lhs = LinExpr::zero();
        for g in 0..ng {
            lhs.push(pg[g][k], 1.0);
        }
        for i in 0..nb {
            if let Some(v) = pf[i][k] {
                lhs.push(v, 1.0);
            }
        }
        let h = format!("balance[{}]", t + 1);
        p.add_eq(h.clone(), lhs, network.total_load(t) - wind.total_mean(t))?;
        balance.push(h);

        // Participation factors.
        let mut lhs = LinExpr::zero();
        for g in 0..ng {
            lhs.push(bg[g][k], 1.0);
            p.add_nonneg(format!("beta_g_nonneg[{},{}]", g + 1, t + 1), LinExpr::var(bg[g][k]))?;
        }
        for (i, bid) in bids.iter().enumerate() {
            if let Some(v) = bf[i][k] {
                lhs.push(v, 1.0);
                p.add_nonneg(format!("beta_f_nonneg[{},{}]", bid.bus, t + 1), LinExpr::var(v))?;
            }
        }
        let h = format!("participation[{}]", t + 1);
        p.add_eq(h.clone(), lhs, 1.0)?;
        participation.push(h);

        // Generator limits, conditioned on Ωₜ.
        for g in 0..ng {
            let a = [LinExpr::var(bg[g][k])];
            add_chance(
                &mut p,
                format!("gen_max[{},{}]", g + 1, t + 1),
                ConstraintClass::Generator,
                g,
                Side::Upper,
                t,
                risk.eps_gen[g],
                &a,
                &sig,
                LinExpr::constant(network.p_max(g)) - LinExpr::var(pg[g][k]),
            )?;
            add_chance(
                &mut p,
                format!("gen_min[{},{}]", g + 1, t + 1),
                ConstraintClass::Generator,
                g,
                Side::Lower,
                t,
                risk.eps_gen[g],
                &a,
                &sig,
                LinExpr::var(pg[g][k]) - network.p_min(g),
            )?;
        }

        // Virtual-battery power and state of charge.
        for (i, bid) in bids.iter().enumerate() {
            let (Some(pfv), Some(bfv)) = (pf[i][k], bf[i][k]) else { continue };
            let v = &alpha[i];
            let a = [LinExpr::var(bfv)];
            add_chance(
                &mut p,
                format!("vb_power_max[{},{}]", bid.bus, t + 1),
                ConstraintClass::VbPower,
                i,
                Side::Upper,
                t,
                risk.eps_power[i],
                &a,
                &sig,
                LinExpr::var(v.r_plus) - LinExpr::var(pfv),
            )?;
            add_chance(
                &mut p,
                format!("vb_power_min[{},{}]", bid.bus, t + 1),
                ConstraintClass::VbPower,
                i,
                Side::Lower,
                t,
                risk.eps_power[i],
                &a,
                &sig,
                LinExpr::var(pfv) - LinExpr::var(v.r_minus),
            )?;

            // E_t = −Σ_{τ≤t} P_f,τ; only window periods contribute.
            let mut cum = LinExpr::zero();
            let mut a = Vec::new();
            let mut sd = Vec::new();
            for (kk, &tau) in periods.iter().enumerate().take(k + 1) {
                if let (Some(pv), Some(bv)) = (pf[i][kk], bf[i][kk]) {
                    cum.push(pv, 1.0);
                    a.push(LinExpr::var(bv));
                    sd.push(sigma[tau]);
                }
            }
            let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(sd));
            add_chance(
                &mut p,
                format!("soc_max[{},{}]", bid.bus, t + 1),
                ConstraintClass::VbEnergy,
                i,
                Side::Upper,
                t,
                risk.eps_energy[i],
                &a,
                &cov,
                LinExpr::var(v.e_plus) + cum.clone(),
            )?;
            add_chance(
                &mut p,
                format!("soc_min[{},{}]", bid.bus, t + 1),
                ConstraintClass::VbEnergy,
                i,
                Side::Lower,
                t,
                risk.eps_energy[i],
                &a,
                &cov,
                -LinExpr::var(v.e_minus) - cum,
            )?;
        }

        // Line flows, conditioned on the vector ωₜ.
        let loads = network.load_at_buses(t);
        let cov_sqrt = wind.cov_sqrt(t);
        for l in 0..nl {
            let mut flow = LinExpr::zero();
            let mut shared = LinExpr::zero();
            for (g, gen) in network.generators.iter().enumerate() {
                let gam = ptdf.get(l, gen.bus);
                flow.push(pg[g][k], gam);
                shared.push(bg[g][k], -gam);
            }
            for (i, bid) in bids.iter().enumerate() {
                let gam = ptdf.get(l, bid.bus);
                if let (Some(pv), Some(bv)) = (pf[i][k], bf[i][k]) {
                    flow.push(pv, gam);
                    shared.push(bv, -gam);
                }
            }
            for (w, unit) in network.wind_units.iter().enumerate() {
                flow.add_constant(ptdf.get(l, unit.bus) * wind.mean[t][w]);
            }
            for (bus, d) in loads.iter().enumerate() {
                flow.add_constant(-ptdf.gamma[(l, bus)] * d);
            }
            let a: Vec<LinExpr> = network
                .wind_units
                .iter()
                .map(|u| shared.clone() + ptdf.get(l, u.bus))
                .collect();
            let fmax = network.flow_limit(l);
            let up = format!("line_max[{},{}]", l + 1, t + 1);
            let dn = format!("line_min[{},{}]", l + 1, t + 1);
            add_chance(
                &mut p,
                up.clone(),
                ConstraintClass::Line,
                l,
                Side::Upper,
                t,
                risk.eps_line[l],
                &a,
                &cov_sqrt,
                LinExpr::constant(fmax) - flow.clone(),
            )?;
            let a_neg: Vec<LinExpr> = a.into_iter().map(|e| -e).collect();
            add_chance(
                &mut p,
                dn.clone(),
                ConstraintClass::Line,
                l,
                Side::Lower,
                t,
                risk.eps_line[l],
                &a_neg,
                &cov_sqrt,
                LinExpr::constant(fmax) + flow,
            )?;
            line_up[l].push(up);
            line_dn[l].push(dn);
        }
    }

    let layout = DecisionLayout {
        periods,
        pg,
        bg,
        pf,
        bf,
        alpha,
        balance,
        participation,
        line_up,
        line_dn,
        chance,
        network: network.clone(),
        ptdf: ptdf.clone(),
        wind: wind.clone(),
        sigma,
        bids: bids.to_vec(),
        risk: risk.clone(),
    };
    Ok((p, layout))
}

/// Single-period chance-constrained economic dispatch for 0-based period `t`.
pub fn build_cedp(
    network: &Network,
    ptdf: &PtdfMatrix,
    wind: &WindModel,
    risk: &RiskParameters,
    t: usize,
) -> Result<(ConicProgram, DecisionLayout), ClearingError> {
    if t >= network.horizon() {
        return Err(ClearingError::Shape(format!("period {} outside horizon {}", t + 1, network.horizon())));
    }
    build(network, ptdf, wind, risk, &[], vec![t])
}

/// Multi-period market clearing over the full horizon.
pub fn build_clearing(
    network: &Network,
    ptdf: &PtdfMatrix,
    wind: &WindModel,
    risk: &RiskParameters,
    bids: &[MdfBid],
    horizon: usize,
) -> Result<(ConicProgram, DecisionLayout), ClearingError> {
    if horizon != network.horizon() {
        return Err(ClearingError::Shape(format!(
            "requested horizon {horizon}, case has {}",
            network.horizon()
        )));
    }
    build(network, ptdf, wind, risk, bids, (0..horizon).collect())
}

/// Analytic evaluation of one chance constraint at the optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanceOutcome {
    pub handle: String,
    pub class: ConstraintClass,
    pub index: usize,
    pub side: Side,
    pub period: usize,
    pub eps: f64,
    /// `b(X*)`
    pub margin: f64,
    /// `‖Σ^{1/2}A(X*)‖`
    pub std: f64,
    /// `Φ(b/std)`, or 0/1 when the random term vanishes.
    pub satisfaction: f64,
    /// The random term does not vanish and `b − κ·std` is within tolerance
    /// of zero.
    pub binding: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

/// Multipliers needed for pricing, per period in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingDuals {
    /// `∂cost/∂(net load)` of each balance equality.
    pub balance: Vec<f64>,
    /// `[l][k]` multipliers of the `b` row of the line constraints.
    pub line_up: Vec<Vec<f64>>,
    pub line_dn: Vec<Vec<f64>>,
}

/// The dispatch decisions alone: set-points, participation factors and
/// acceptances. Enough to replay the recourse policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchPolicy {
    pub periods: Vec<usize>,
    pub pg: Vec<Vec<f64>>,
    pub bg: Vec<Vec<f64>>,
    pub pf: Vec<Vec<f64>>,
    pub bf: Vec<Vec<f64>>,
    pub acceptance: Vec<MdfAcceptance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingSolution {
    pub periods: Vec<usize>,
    /// `[g][k]`, per-unit.
    pub pg: Vec<Vec<f64>>,
    pub bg: Vec<Vec<f64>>,
    /// `[i][k]`, zero outside the service window.
    pub pf: Vec<Vec<f64>>,
    pub bf: Vec<Vec<f64>>,
    pub acceptance: Vec<MdfAcceptance>,
    /// `E[Σ C(P_g)]`, $.
    pub expected_generation_cost: f64,
    pub reward_payment: f64,
    pub objective: f64,
    pub chance: Vec<ChanceOutcome>,
    pub duals: PricingDuals,
    pub lmp: LmpProfile,
    pub diagnostics: SolverDiagnostics,
}

impl ClearingSolution {
    pub fn policy(&self) -> DispatchPolicy {
        DispatchPolicy {
            periods: self.periods.clone(),
            pg: self.pg.clone(),
            bg: self.bg.clone(),
            pf: self.pf.clone(),
            bf: self.bf.clone(),
            acceptance: self.acceptance.clone(),
        }
    }

    /// Outcome registered under `handle`.
    pub fn chance_outcome(&self, handle: &str) -> Option<&ChanceOutcome> {
        self.chance.iter().find(|c| c.handle == handle)
    }
}

const CONSISTENCY_TOL: f64 = 1e-6;
const BINDING_TOL: f64 = 1e-5;
/// Random terms with a smaller standard deviation (per-unit) are solver
/// residue of a zero participation factor; such constraints are treated as
/// deterministic.
const STD_FLOOR: f64 = 1e-6;

/// Reads primal values and multipliers, checks the market invariants and
/// evaluates every chance constraint analytically.
pub fn extract_solution(
    program: &ConicProgram,
    layout: &DecisionLayout,
    sol: &ConicSolution,
) -> Result<ClearingSolution, ClearingError> {
    if sol.status != SolveStatus::Optimal {
        return Err(ClearingError::NotOptimal(sol.status));
    }
    let x = &sol.x;
    let val = |v: Var| x[v.index()];
    let opt = |v: Option<Var>| v.map_or(0.0, |v| x[v.index()]);
    let network = &layout.network;
    let nk = layout.periods.len();

    let pg: Vec<Vec<f64>> = layout.pg.iter().map(|r| r.iter().map(|&v| val(v)).collect()).collect();
    let bg: Vec<Vec<f64>> = layout.bg.iter().map(|r| r.iter().map(|&v| val(v)).collect()).collect();
    let pf: Vec<Vec<f64>> = layout.pf.iter().map(|r| r.iter().map(|&v| opt(v)).collect()).collect();
    let bf: Vec<Vec<f64>> = layout.bf.iter().map(|r| r.iter().map(|&v| opt(v)).collect()).collect();
    let acceptance: Vec<MdfAcceptance> = layout
        .alpha
        .iter()
        .map(|a| MdfAcceptance {
            alpha_r_minus: val(a.r_minus),
            alpha_r_plus: val(a.r_plus),
            alpha_e_minus: val(a.e_minus),
            alpha_e_plus: val(a.e_plus),
        })
        .collect();

    for (k, &t) in layout.periods.iter().enumerate() {
        let supply: f64 = pg.iter().map(|r| r[k]).sum::<f64>() + pf.iter().map(|r| r[k]).sum::<f64>();
        let demand = network.total_load(t) - layout.wind.total_mean(t);
        let err = (supply - demand).abs();
        if err > CONSISTENCY_TOL {
            return Err(ClearingError::Inconsistent {
                handle: layout.balance[k].clone(),
                violation: err,
            });
        }
        let total: f64 = bg.iter().map(|r| r[k]).sum::<f64>() + bf.iter().map(|r| r[k]).sum::<f64>();
        if (total - 1.0).abs() > CONSISTENCY_TOL {
            return Err(ClearingError::Inconsistent {
                handle: layout.participation[k].clone(),
                violation: (total - 1.0).abs(),
            });
        }
        for (g, r) in bg.iter().enumerate() {
            if r[k] < -CONSISTENCY_TOL {
                return Err(ClearingError::Inconsistent {
                    handle: format!("beta_g_nonneg[{},{}]", g + 1, t + 1),
                    violation: -r[k],
                });
            }
        }
        for (i, r) in bf.iter().enumerate() {
            if r[k] < -CONSISTENCY_TOL {
                return Err(ClearingError::Inconsistent {
                    handle: format!("beta_f_nonneg[{},{}]", layout.bids[i].bus, t + 1),
                    violation: -r[k],
                });
            }
        }
    }
    for (bid, acc) in layout.bids.iter().zip(&acceptance) {
        if acc.check(bid, CONSISTENCY_TOL).is_err() {
            return Err(ClearingError::Inconsistent {
                handle: format!("alpha[{}]", bid.bus),
                violation: 0.0,
            });
        }
    }

    let mut gen_cost = 0.0;
    for (k, &t) in layout.periods.iter().enumerate() {
        let s2 = layout.sigma[t].powi(2);
        for g in 0..pg.len() {
            let (c2, c1, c0) = network.cost_pu(g);
            gen_cost += c2 * (pg[g][k].powi(2) + s2 * bg[g][k].powi(2)) + c1 * pg[g][k] + c0;
        }
    }
    let reward_payment: f64 = layout
        .bids
        .iter()
        .zip(&acceptance)
        .map(|(b, a)| b.reward_function().value(a))
        .sum();

    let chance = layout
        .chance
        .iter()
        .map(|r| {
            let (b, sd) = r.evaluate(x);
            let stochastic = sd > STD_FLOOR;
            let satisfaction = if stochastic {
                standard_normal_cdf(b / sd)
            } else if b >= -CONSISTENCY_TOL {
                1.0
            } else {
                0.0
            };
            let scale = 1.0 + b.abs().max(r.kappa * sd);
            ChanceOutcome {
                handle: r.handle.clone(),
                class: r.class,
                index: r.index,
                side: r.side,
                period: r.period,
                eps: r.eps,
                margin: b,
                std: sd,
                satisfaction,
                binding: stochastic && (b - r.kappa * sd).abs() <= BINDING_TOL * scale,
            }
        })
        .collect();

    let first = |h: &str| -> Result<f64, ClearingError> { Ok(sol.dual_of(h)?[0]) };
    let balance = layout.balance.iter().map(|h| first(h)).collect::<Result<Vec<_>, _>>()?;
    let line_duals = |hs: &Vec<Vec<String>>| -> Result<Vec<Vec<f64>>, ClearingError> {
        hs.iter().map(|r| r.iter().map(|h| first(h)).collect()).collect()
    };
    let duals = PricingDuals {
        balance,
        line_up: line_duals(&layout.line_up)?,
        line_dn: line_duals(&layout.line_dn)?,
    };
    debug_assert_eq!(duals.balance.len(), nk);
    let lmp = pricing::lmps_from_duals(&duals, &layout.periods, &layout.ptdf, network.power_base);
    let _ = program;

    Ok(ClearingSolution {
        periods: layout.periods.clone(),
        pg,
        bg,
        pf,
        bf,
        acceptance,
        expected_generation_cost: gen_cost,
        reward_payment,
        objective: sol.objective,
        chance,
        duals,
        lmp,
        diagnostics: SolverDiagnostics {
            status: sol.status,
            iterations: sol.iterations,
            primal_residual: sol.residuals.primal,
            dual_residual: sol.residuals.dual,
            gap: sol.residuals.gap,
        },
    })
}

/// Builds, solves and extracts in one call.
pub fn clear(
    network: &Network,
    ptdf: &PtdfMatrix,
    wind: &WindModel,
    risk: &RiskParameters,
    bids: &[MdfBid],
    settings: &SolverSettings,
) -> Result<(ClearingSolution, DecisionLayout), ClearingError> {
    let (prog, layout) = build_clearing(network, ptdf, wind, risk, bids, network.horizon())?;
    let sol = solve(&prog, settings)?;
    let out = extract_solution(&prog, &layout, &sol)?;
    Ok((out, layout))
}

/// Single-period dispatch for 0-based period `t`.
pub fn solve_cedp(
    network: &Network,
    ptdf: &PtdfMatrix,
    wind: &WindModel,
    risk: &RiskParameters,
    t: usize,
    settings: &SolverSettings,
) -> Result<(ClearingSolution, DecisionLayout), ClearingError> {
    let (prog, layout) = build_cedp(network, ptdf, wind, risk, t)?;
    let sol = solve(&prog, settings)?;
    let out = extract_solution(&prog, &layout, &sol)?;
    Ok((out, layout))
}
