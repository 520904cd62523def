use approx::assert_abs_diff_eq;
use flexmarket::case::Case;
use flexmarket::clearing::{clear, solve_cedp, RiskParameters};
use flexmarket::grid::{compute_ptdf, Generator, Line, Load, Network};
use flexmarket::pricing::*;
use flexmarket::stochastic::WindModel;
use flexmarket::PricingError;
use flexmarket_conic::SolverSettings;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn objective_with_load(c: &Case, bus: usize, t: usize, delta_pu: f64, with_bids: bool) -> f64 {
    let mut net = c.network.clone();
    let load = net.loads.iter_mut().find(|l| l.bus == bus).unwrap();
    load.profile[t] += delta_pu;
    let ptdf = compute_ptdf(&net, net.slack_bus).unwrap();
    let bids = if with_bids { &c.bids[..] } else { &[] };
    clear(&net, &ptdf, &c.wind, &c.risk, bids, &SolverSettings::default()).unwrap().0.objective
}

fn finite_difference_check(name: &str, with_bids: bool, seed: u64) {
    let c = Case::embedded(name).unwrap();
    let ptdf = compute_ptdf(&c.network, c.network.slack_bus).unwrap();
    let bids = if with_bids { &c.bids[..] } else { &[] };
    let (sol, _) = clear(&c.network, &ptdf, &c.wind, &c.risk, bids, &SolverSettings::default()).unwrap();
    let load_buses: Vec<usize> = c.network.loads.iter().map(|l| l.bus).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 1e-3;
    for _ in 0..5 {
        let bus = load_buses[rng.random_range(0..load_buses.len())];
        let t = rng.random_range(0..24);
        let fd = (objective_with_load(&c, bus, t, d, with_bids) - objective_with_load(&c, bus, t, -d, with_bids))
            / (2.0 * d)
            / c.network.power_base;
        let lmp = sol.lmp.at(bus, t).unwrap();
        assert!((fd - lmp).abs() <= 0.01 * lmp.abs(), "{name} bus {bus} period {}: lmp {lmp} fd {fd}", t + 1);
    }
}

#[test]
fn sixbus_benchmark_prices_match_finite_differences() {
    finite_difference_check("sixbus", false, 7);
}

#[test]
fn ninebus_prices_match_finite_differences() {
    finite_difference_check("ninebus", true, 8);
}

#[test]
fn uncongested_price_is_marginal_cost() {
    let gens = vec![
        Generator { bus: 1, p_min_mw: 0.0, p_max_mw: 300.0, c2: 0.02, c1: 3.0, c0: 0.0 },
        Generator { bus: 2, p_min_mw: 0.0, p_max_mw: 300.0, c2: 0.04, c1: 2.0, c0: 0.0 },
    ];
    let line = Line { from_bus: 1, to_bus: 2, reactance: 0.1, flow_limit_mw: 1000.0 };
    let load = Load { bus: 2, profile: vec![1.5] };
    let net = Network::new(2, vec![line], gens, vec![], vec![load], vec![], 100.0, Some(1)).unwrap();
    let wind = WindModel::deterministic(vec![vec![]]).unwrap();
    let ptdf = compute_ptdf(&net, 1).unwrap();
    let risk = RiskParameters::uniform(&net, 0, 0.1, 0.1, 0.5, 0.5);
    let (sol, _) = solve_cedp(&net, &ptdf, &wind, &risk, 0, &SolverSettings::default()).unwrap();
    // Equal marginal costs: 0.04·P1 + 3 = 0.08·P2 + 2 with P1 + P2 = 150.
    let p1 = (0.08 * 150.0 - 1.0) / 0.12;
    let marginal = 0.04 * p1 + 3.0;
    for bus in [1, 2] {
        assert_abs_diff_eq!(sol.lmp.at(bus, 0).unwrap(), marginal, epsilon = 1e-6);
    }
}

#[test]
fn off_peak_prices_are_uniform() {
    let c = Case::embedded("sixbus").unwrap();
    let ptdf = compute_ptdf(&c.network, 1).unwrap();
    let (sol, _) = clear(&c.network, &ptdf, &c.wind, &c.risk, &[], &SolverSettings::default()).unwrap();
    let t = 3;
    let line_duals = sol.duals.line_up.iter().chain(&sol.duals.line_dn).map(|d| d[t].abs()).fold(0.0, f64::max);
    assert!(line_duals < 1e-6, "{line_duals}");
    let p: Vec<f64> = [3, 4, 5].iter().map(|&b| sol.lmp.at(b, t).unwrap()).collect();
    assert!(p.iter().all(|x| (x - p[0]).abs() < 1e-3), "{p:?}");
}

#[test]
fn prices_do_not_depend_on_slack() {
    let c = Case::embedded("sixbus").unwrap();
    let s = SolverSettings::default();
    let base = {
        let ptdf = compute_ptdf(&c.network, 1).unwrap();
        clear(&c.network, &ptdf, &c.wind, &c.risk, &[], &s).unwrap().0.lmp
    };
    for slack in [2, 6] {
        let ptdf = compute_ptdf(&c.network, slack).unwrap();
        let other = clear(&c.network, &ptdf, &c.wind, &c.risk, &[], &s).unwrap().0.lmp;
        for (a, b) in base.prices.iter().flatten().zip(other.prices.iter().flatten()) {
            assert!((a - b).abs() < 1e-4, "slack {slack}: {a} vs {b}");
        }
    }
}

#[test]
fn flexibility_reduces_price_volatility() {
    let c = Case::embedded("sixbus").unwrap();
    let ptdf = compute_ptdf(&c.network, 1).unwrap();
    let s = SolverSettings::default();
    let stats = |bids: &[flexmarket::bids::MdfBid]| {
        let (sol, _) = clear(&c.network, &ptdf, &c.wind, &c.risk, bids, &s).unwrap();
        lmp_stats(&sol.lmp, &[3, 4, 5]).unwrap()
    };
    let bench = stats(&[]);
    let low = stats(&c.with_rewards(Some(50.0), Some(50.0)).bids);
    let high = stats(&c.with_rewards(Some(500.0), Some(500.0)).bids);
    for i in 0..3 {
        assert!(bench[i].std > high[i].std, "{:?} {:?}", bench[i], high[i]);
        assert!(high[i].std >= low[i].std, "{:?} {:?}", high[i], low[i]);
        assert!(low[i].mean <= bench[i].mean);
    }
}

#[test]
fn constant_profile_statistics() {
    let p = LmpProfile { periods: vec![0, 1, 2], prices: vec![vec![20.0, 30.0]; 3] };
    let s = lmp_stats(&p, &[1, 2]).unwrap();
    assert_eq!((s[0].mean, s[0].std, s[0].min, s[0].max), (20.0, 0.0, 20.0, 20.0));
    assert_eq!(s[1].mean, 30.0);
    assert!(matches!(lmp_stats(&p, &[3]), Err(PricingError::UnknownBus(3))));
    let empty = LmpProfile { periods: vec![], prices: vec![] };
    assert!(matches!(lmp_stats(&empty, &[1]), Err(PricingError::Empty)));
}

#[test]
fn population_statistics() {
    let p = LmpProfile { periods: vec![0, 1], prices: vec![vec![10.0], vec![14.0]] };
    let s = lmp_stats(&p, &[1]).unwrap();
    assert_eq!((s[0].mean, s[0].std), (12.0, 2.0));
}

#[test]
fn csv_layout() {
    let p = LmpProfile { periods: vec![4, 5], prices: vec![vec![1.0, 2.0], vec![3.0, 4.5]] };
    let mut out = Vec::new();
    write_lmp_csv(&p, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "period,bus,lmp_usd_per_mwh");
    assert_eq!(lines[1], "5,1,1.000000");
    assert_eq!(lines[4], "6,2,4.500000");
    let mut out = Vec::new();
    write_lmp_stats_csv(&lmp_stats(&p, &[2]).unwrap(), &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 2);
}
