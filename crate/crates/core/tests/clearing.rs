#[path = "../../verification/src/lib.rs"]
mod support;

use approx::assert_abs_diff_eq;
use flexmarket::bids::MdfBid;
use flexmarket::case::Case;
use flexmarket::clearing::*;
use flexmarket::grid::{compute_ptdf, Generator, Line, Load, Network, WindUnit};
use flexmarket::stochastic::{quantile_standard_normal, WindModel};
use flexmarket::ClearingError;
use flexmarket_conic::{ConicProgram, LinExpr, SolverSettings};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn settings() -> SolverSettings {
    SolverSettings::default()
}

fn clear_case(c: &Case, bids: &[MdfBid]) -> (ClearingSolution, DecisionLayout) {
    let ptdf = compute_ptdf(&c.network, c.network.slack_bus).unwrap();
    clear(&c.network, &ptdf, &c.wind, &c.risk, bids, &settings()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn gen(bus: usize, pmax: f64, c2: f64, c1: f64) -> Generator {
    Generator {
        bus,
        p_min_mw: 0.0,
        p_max_mw: pmax,
        c2,
        c1,
        c0: 10.0,
    }
}

/// Two buses, wind at bus 2, load at bus 2.
fn two_bus(gens: Vec<Generator>, limit_mw: f64, load_mw: f64, wind_pu: f64, ratio: f64) -> (Network, WindModel) {
    let line = Line {
        from_bus: 1,
        to_bus: 2,
        reactance: 0.1,
        flow_limit_mw: limit_mw,
    };
    let load = Load {
        bus: 2,
        profile: vec![load_mw / 100.0],
    };
    let net = Network::new(2, vec![line], gens, vec![WindUnit { bus: 2 }], vec![load], vec![], 100.0, Some(1)).unwrap();
    let wind = WindModel::diagonal_relative(vec![vec![wind_pu]], ratio).unwrap();
    (net, wind)
}

#[test]
fn median_risk_gives_zero_multiplier() {
    let mut p = ConicProgram::new();
    let v = p.add_var("x");
    let f = reformulate_chance(&[LinExpr::var(v)], LinExpr::constant(1.0), &DMatrix::identity(1, 1), 0.5).unwrap();
    assert_eq!(f.kappa, 0.0);
    assert!(f.u.iter().all(|u| u.eval(&[3.0]) == 0.0));
}

#[test]
fn boundary_at_ninety_percent() {
    let f = reformulate_chance(&[LinExpr::constant(1.0)], LinExpr::constant(0.0), &DMatrix::identity(1, 1), 0.1).unwrap();
    assert_abs_diff_eq!(f.kappa, quantile_standard_normal(0.9).unwrap(), epsilon = 1e-15);
    assert_abs_diff_eq!(f.kappa, 1.2816, epsilon = 1e-4);
    // The constraint holds exactly when b reaches κ·σ·|A|.
    assert_abs_diff_eq!(f.u[0].eval(&[]), f.kappa, epsilon = 1e-15);
}

#[test]
fn zero_covariance_is_deterministic() {
    let mut p = ConicProgram::new();
    let v = p.add_var("x");
    let f = reformulate_chance(&[LinExpr::var(v), LinExpr::var(v)], LinExpr::var(v), &DMatrix::zeros(2, 2), 0.05).unwrap();
    assert!(f.std_rows.iter().all(|r| r.eval(&[7.0]) == 0.0));
}

#[test]
fn reformulation_rejects_bad_inputs() {
    let one = DMatrix::identity(1, 1);
    for eps in [0.0, 0.6, -0.1] {
        let r = reformulate_chance(&[LinExpr::constant(1.0)], LinExpr::zero(), &one, eps);
        assert!(matches!(r, Err(ClearingError::Risk(_))), "{eps}");
    }
    let r = reformulate_chance(&[LinExpr::constant(1.0)], LinExpr::zero(), &DMatrix::identity(2, 2), 0.1);
    assert!(matches!(r, Err(ClearingError::Shape(_))));
}

#[test]
fn soc_constraint_accumulates_window() {
    let c = Case::embedded("ninebus").unwrap();
    let ptdf = compute_ptdf(&c.network, 1).unwrap();
    let (prog, layout) = build_clearing(&c.network, &ptdf, &c.wind, &c.risk, &c.bids, 24).unwrap();
    let rec = layout.chance.iter().find(|r| r.handle == "soc_max[7,12]").unwrap();
    assert_eq!(rec.class, ConstraintClass::VbEnergy);
    assert_eq!(rec.std_rows.len(), 3);
    let x: Vec<f64> = (0..prog.num_vars()).map(|i| (i as f64 * 0.37).sin()).collect();
    let i = 1;
    let expected = x[layout.alpha[i].e_plus.index()] + (9..12).map(|k| x[layout.pf[i][k].unwrap().index()]).sum::<f64>();
    assert_abs_diff_eq!(rec.b.eval(&x), expected, epsilon = 1e-12);
    for (row, k) in rec.std_rows.iter().zip(9..12) {
        let want = layout.sigma[k] * x[layout.bf[i][k].unwrap().index()];
        assert_abs_diff_eq!(row.eval(&x), want, epsilon = 1e-12);
    }
    // Outside the window there are no aggregator variables.
    assert!(layout.pf[i][8].is_none() && layout.pf[i][16].is_none());
    assert!(layout.chance.iter().all(|r| r.handle != "soc_max[7,17]"));
}

#[test]
fn sixbus_matches_angle_formulation() {
    let c = Case::embedded("sixbus").unwrap();
    let periods: Vec<usize> = (0..24).collect();
    let wind: Vec<Vec<f64>> = c.wind.mean.clone();
    for gamma in [None, Some(50.0), Some(500.0)] {
        let bids = match gamma {
            None => vec![],
            Some(g) => c.with_rewards(Some(g), Some(g)).bids,
        };
        let (sol, _) = clear_case(&c, &bids);
        let oracle = support::angle_dispatch(&c.network, &wind, &bids, &periods);
        assert!(rel(sol.objective, oracle) < 1e-8, "{gamma:?}: {} vs {oracle}", sol.objective);
    }
}

#[test]
fn ninebus_without_uncertainty_matches_angle_formulation() {
    let c = Case::embedded("ninebus").unwrap();
    let wind = c.wind.without_uncertainty();
    let ptdf = compute_ptdf(&c.network, 1).unwrap();
    let t = c.network.peak_period();
    let (sol, _) = solve_cedp(&c.network, &ptdf, &wind, &c.risk, t, &settings()).unwrap();
    let oracle = support::angle_dispatch(&c.network, &wind.mean, &[], &[t]);
    assert!(rel(sol.objective, oracle) < 1e-8, "{} vs {oracle}", sol.objective);
    let (sol, _) = clear(&c.network, &ptdf, &wind, &c.risk, &c.bids, &settings()).unwrap();
    let oracle = support::angle_dispatch(&c.network, &wind.mean, &c.bids, &(0..24).collect::<Vec<_>>());
    assert!(rel(sol.objective, oracle) < 1e-8, "{} vs {oracle}", sol.objective);
}

#[test]
fn single_generator_takes_all_recourse() {
    let (net, wind) = two_bus(vec![gen(1, 500.0, 0.02, 3.0)], 500.0, 120.0, 0.3, 0.2);
    let ptdf = compute_ptdf(&net, 1).unwrap();
    let risk = RiskParameters::uniform(&net, 0, 0.05, 0.05, 0.5, 0.5);
    let (sol, _) = solve_cedp(&net, &ptdf, &wind, &risk, 0, &settings()).unwrap();
    assert_abs_diff_eq!(sol.bg[0][0], 1.0, epsilon = 1e-8);
    assert_abs_diff_eq!(sol.pg[0][0], 0.9, epsilon = 1e-8);
    let sigma = 0.06;
    let merit = 0.02 * 1e4 * (0.81 + sigma * sigma) + 300.0 * 0.9 + 10.0;
    assert!(rel(sol.objective, merit) < 1e-8, "{} vs {merit}", sol.objective);
}

#[test]
fn participation_is_inverse_to_quadratic_cost() {
    let (c2a, c2b) = (0.02, 0.05);
    let (net, wind) = two_bus(vec![gen(1, 500.0, c2a, 3.0), gen(2, 500.0, c2b, 2.0)], 1000.0, 150.0, 0.4, 0.25);
    let ptdf = compute_ptdf(&net, 1).unwrap();
    let risk = RiskParameters::uniform(&net, 0, 0.05, 0.05, 0.5, 0.5);
    let (sol, _) = solve_cedp(&net, &ptdf, &wind, &risk, 0, &settings()).unwrap();
    let want = (1.0 / c2a) / (1.0 / c2a + 1.0 / c2b);
    assert_abs_diff_eq!(sol.bg[0][0], want, epsilon = 1e-6);
    assert_abs_diff_eq!(sol.bg[1][0], 1.0 - want, epsilon = 1e-6);
    assert!(sol.chance.iter().all(|c| !c.binding));
}

#[test]
fn prohibitive_rewards_clear_nothing() {
    let c = Case::embedded("ninebus").unwrap();
    let (base, _) = clear_case(&c, &[]);
    let pricey = c.with_rewards(Some(1e6), Some(1e6));
    let (sol, _) = clear_case(&c, &pricey.bids);
    for a in &sol.acceptance {
        for v in [a.alpha_r_minus, a.alpha_r_plus, a.alpha_e_minus, a.alpha_e_plus] {
            assert!(v.abs() < 1e-6, "{a:?}");
        }
    }
    assert!(rel(sol.objective, base.objective) < 1e-4, "{} vs {}", sol.objective, base.objective);
}

#[test]
fn sixbus_regression() {
    let c = Case::embedded("sixbus").unwrap();
    let (bench, _) = clear_case(&c, &[]);
    let (low, _) = clear_case(&c, &c.with_rewards(Some(50.0), Some(50.0)).bids);
    let (high, _) = clear_case(&c, &c.with_rewards(Some(500.0), Some(500.0)).bids);
    assert!(rel(bench.objective, 58264.826) < 1e-7, "{}", bench.objective);
    assert!(rel(low.objective, 55076.147) < 1e-7, "{}", low.objective);
    assert!(rel(high.objective, 55880.584) < 1e-7, "{}", high.objective);
    let low_r = [0.16078, 0.08166, 0.16089];
    let high_r = [0.07414, 0.06267, 0.08890];
    for i in 0..3 {
        for sol in [&low, &high] {
            let a = sol.acceptance[i];
            assert!(a.alpha_r_minus.abs() < 1e-5 && a.alpha_e_plus.abs() < 1e-5, "{a:?}");
            assert!((a.alpha_e_minus + 0.5).abs() < 1e-5, "{a:?}");
        }
        assert_abs_diff_eq!(low.acceptance[i].alpha_r_plus, low_r[i], epsilon = 1e-4);
        assert_abs_diff_eq!(high.acceptance[i].alpha_r_plus, high_r[i], epsilon = 1e-4);
        assert!(high.acceptance[i].alpha_r_plus < low.acceptance[i].alpha_r_plus);
    }
}

#[test]
fn ninebus_regression() {
    let c = Case::embedded("ninebus").unwrap();
    let (sol, _) = clear_case(&c, &c.bids);
    assert!(rel(sol.objective, 64599.038) < 1e-7, "{}", sol.objective);
    let want = [[0.0, 0.0, 0.0, 0.0], [0.0, 0.1, -0.6, 0.0], [0.0, 0.1, -0.5, 0.0]];
    for (a, w) in sol.acceptance.iter().zip(want) {
        let got = [a.alpha_r_minus, a.alpha_r_plus, a.alpha_e_minus, a.alpha_e_plus];
        for (g, w) in got.iter().zip(w) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-5);
        }
    }
}

#[test]
fn solution_invariants() {
    let c = Case::embedded("ninebus").unwrap();
    let (sol, layout) = clear_case(&c, &c.bids);
    let net = &c.network;
    for k in 0..24 {
        let supply: f64 = (0..3).map(|g| sol.pg[g][k]).sum::<f64>() + (0..3).map(|i| sol.pf[i][k]).sum::<f64>();
        assert_abs_diff_eq!(supply, net.total_load(k) - c.wind.total_mean(k), epsilon = 1e-6);
        let beta: f64 = (0..3).map(|g| sol.bg[g][k]).sum::<f64>() + (0..3).map(|i| sol.bf[i][k]).sum::<f64>();
        assert_abs_diff_eq!(beta, 1.0, epsilon = 1e-6);
        assert!(sol.bg.iter().chain(&sol.bf).all(|b| b[k] >= -1e-9));
        for (i, bid) in c.bids.iter().enumerate() {
            if !bid.active(k) {
                assert_eq!((sol.pf[i][k], sol.bf[i][k]), (0.0, 0.0));
            }
        }
    }
    for (bid, a) in c.bids.iter().zip(&sol.acceptance) {
        a.check(bid, 1e-6).unwrap();
    }
    let mut cost = 0.0;
    for k in 0..24 {
        for g in 0..3 {
            let (c2, c1, c0) = net.cost_pu(g);
            let s = layout.sigma[k];
            cost += c2 * (sol.pg[g][k].powi(2) + s * s * sol.bg[g][k].powi(2)) + c1 * sol.pg[g][k] + c0;
        }
    }
    assert!(rel(sol.expected_generation_cost, cost) < 1e-12);
    assert!(rel(sol.objective, cost + sol.reward_payment) < 1e-8);
    assert_eq!(sol.chance.len(), layout.chance.len());
    for ch in &sol.chance {
        assert!(ch.satisfaction >= 1.0 - ch.eps - 1e-6, "{ch:?}");
        assert!(ch.margin >= -1e-7, "{ch:?}");
    }
    assert!(sol.chance.iter().any(|c| c.binding));
}

#[test]
fn tighter_risk_costs_more() {
    let c = Case::embedded("ninebus").unwrap();
    let mut last = f64::NEG_INFINITY;
    for eps in [0.5, 0.3, 0.2, 0.1, 0.05, 0.02] {
        let mut case = c.clone();
        case.risk = RiskParameters::uniform(&c.network, 3, eps, eps, eps, eps);
        let (sol, _) = clear_case(&case, &case.bids);
        assert!(sol.objective >= last - 1e-7 * last.abs(), "eps {eps}: {} < {last}", sol.objective);
        last = sol.objective;
    }
}

#[test]
fn higher_rewards_never_clear_more() {
    let c = Case::embedded("ninebus").unwrap();
    let mut last: Option<Vec<(f64, f64)>> = None;
    for g in [110.0, 300.0, 510.0, 900.0, 1500.0, 2500.0] {
        let case = c.with_rewards(Some(g), Some(g));
        let (sol, _) = clear_case(&case, &case.bids);
        let now: Vec<(f64, f64)> = sol.acceptance.iter().map(|a| (a.alpha_r_plus.abs(), a.alpha_e_minus.abs())).collect();
        if let Some(prev) = &last {
            for (p, n) in prev.iter().zip(&now) {
                assert!(n.0 <= p.0 + 1e-6 && n.1 <= p.1 + 1e-6, "gamma {g}: {n:?} > {p:?}");
            }
        }
        last = Some(now);
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let c = Case::embedded("ninebus").unwrap();
    let ptdf = compute_ptdf(&c.network, 1).unwrap();
    let mut risk = c.risk.clone();
    risk.eps_line[0] = 0.7;
    assert!(matches!(
        build_clearing(&c.network, &ptdf, &c.wind, &risk, &c.bids, 24),
        Err(ClearingError::Risk(_))
    ));
    let mut bids = c.bids.clone();
    bids[0].t_end = 30;
    assert!(build_clearing(&c.network, &ptdf, &c.wind, &c.risk, &bids, 24).is_err());
    assert!(build_clearing(&c.network, &ptdf, &c.wind, &c.risk, &c.bids, 12).is_err());
    assert!(build_cedp(&c.network, &ptdf, &c.wind, &c.risk, 24).is_err());
}

#[test]
fn empty_bid_list_has_no_acceptance_variables() {
    let c = Case::embedded("ninebus").unwrap();
    let ptdf = compute_ptdf(&c.network, 1).unwrap();
    let (prog, layout) = build_clearing(&c.network, &ptdf, &c.wind, &c.risk, &[], 24).unwrap();
    assert!(layout.alpha.is_empty());
    assert!(prog.var_names().iter().all(|n| !n.starts_with("alpha")));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tightening_one_risk_level_never_helps(
        eps in 0.02f64..0.5,
        shrink in 0.1f64..1.0,
        which in 0usize..2,
        limit in 60.0f64..200.0,
    ) {
        let (net, wind) = two_bus(vec![gen(1, 300.0, 0.02, 3.0), gen(2, 120.0, 0.05, 2.0)], limit, 150.0, 0.4, 0.3);
        let ptdf = compute_ptdf(&net, 1).unwrap();
        let loose = RiskParameters::uniform(&net, 0, eps, eps, 0.5, 0.5);
        let mut tight = loose.clone();
        if which == 0 { tight.eps_gen[1] *= shrink } else { tight.eps_line[0] *= shrink }
        let (a, _) = solve_cedp(&net, &ptdf, &wind, &loose, 0, &settings()).unwrap();
        // An infeasible tighter problem also counts as "never helps".
        if let Ok((b, _)) = solve_cedp(&net, &ptdf, &wind, &tight, 0, &settings()) {
            prop_assert!(b.objective >= a.objective - 1e-7 * a.objective.abs());
        }
    }
}
