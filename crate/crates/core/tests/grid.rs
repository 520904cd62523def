use approx::assert_abs_diff_eq;
use flexmarket::case::Case;
use flexmarket::grid::{compute_ptdf, connection_matrices, load_case, Line, Load, Network};
use flexmarket::{CaseError, GridError};
use proptest::prelude::*;

fn line(from: usize, to: usize, x: f64) -> Line {
    Line {
        from_bus: from,
        to_bus: to,
        reactance: x,
        flow_limit_mw: 100.0,
    }
}

fn bare(n: usize, lines: Vec<Line>) -> Network {
    Network::new(n, lines, vec![], vec![], vec![], vec![], 100.0, Some(1)).unwrap()
}

#[test]
fn sixbus_shape() {
    let c = Case::embedded("sixbus").unwrap();
    let n = &c.network;
    assert_eq!(n.num_buses(), 6);
    assert_eq!(n.lines.len(), 7);
    assert_eq!(n.generators.len(), 3);
    assert_eq!(n.horizon(), 24);
    assert_eq!(n.power_base, 100.0);
}

#[test]
fn ninebus_shape() {
    let c = Case::embedded("ninebus").unwrap();
    let n = &c.network;
    assert_eq!(n.num_buses(), 9);
    assert_eq!(n.generators.iter().map(|g| g.bus).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(n.wind_units.iter().map(|w| w.bus).collect::<Vec<_>>(), [4, 6, 8]);
    assert_eq!(n.aggregator_buses, [5, 7, 9]);
}

#[test]
fn self_loop_is_rejected() {
    let err = Network::new(2, vec![line(2, 2, 0.1)], vec![], vec![], vec![], vec![], 100.0, Some(1)).unwrap_err();
    assert!(matches!(err, GridError::SelfLoop { line: 1, bus: 2 }));
}

#[test]
fn dangling_reference_is_rejected() {
    let loads = vec![Load { bus: 7, profile: vec![1.0] }];
    let err = Network::new(2, vec![line(1, 2, 0.1)], vec![], vec![], loads, vec![], 100.0, Some(1)).unwrap_err();
    assert!(matches!(err, GridError::DanglingBus { bus: 7, .. }));
}

#[test]
fn self_loop_in_document() {
    let text = r#"{"power_base_mva": 100, "buses": [{"id": 1}, {"id": 2}],
        "lines": [{"from": 1, "to": 1, "reactance_pu": 0.1, "flow_limit_mw": 10}],
        "generators": [{"bus": 1, "p_min_mw": 0, "p_max_mw": 10, "c2": 0, "c1": 1, "c0": 0}],
        "loads": [{"bus": 2, "profile_mw": [1]}]}"#;
    let err = load_case(text).unwrap_err();
    assert!(matches!(err, CaseError::Grid(GridError::SelfLoop { .. })), "{err}");
}

#[test]
fn parse_error_names_field_and_location() {
    let text = r#"{"power_base_mva": 100, "buses": [{"id": 1}, {"id": 2}],
        "lines": [{"from": 1, "to": 2, "reactance_pu": "fast", "flow_limit_mw": 10}],
        "generators": [], "loads": []}"#;
    let err = load_case(text).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("lines[0].reactance_pu"), "{msg}");
    assert!(matches!(err, CaseError::Parse { line: 2, .. }), "{msg}");
}

#[test]
fn missing_field_is_reported() {
    let text = r#"{"power_base_mva": 100, "buses": [{"id": 1}], "lines": [], "loads": []}"#;
    let msg = load_case(text).unwrap_err().to_string();
    assert!(msg.contains("generators"), "{msg}");
}

#[test]
fn two_bus_ptdf() {
    let n = bare(2, vec![line(1, 2, 0.1)]);
    let p = compute_ptdf(&n, 1).unwrap();
    assert_abs_diff_eq!(p.get(0, 2), -1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(p.get(0, 1), 0.0);
}

#[test]
fn three_bus_ring_splits_two_to_one() {
    // Injection at bus 2 returns to the slack directly (2/3) or via bus 3 (1/3).
    let n = bare(3, vec![line(1, 2, 0.1), line(1, 3, 0.1), line(3, 2, 0.1)]);
    let p = compute_ptdf(&n, 1).unwrap();
    assert_abs_diff_eq!(p.get(0, 2), -2.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(p.get(1, 2), -1.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(p.get(2, 2), -1.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn zero_injection_gives_zero_flow() {
    let c = Case::embedded("sixbus").unwrap();
    let p = compute_ptdf(&c.network, 1).unwrap();
    assert!(p.flows(&[0.0; 6]).iter().all(|f| *f == 0.0));
    assert!(p.gamma.column(0).iter().all(|v| *v == 0.0));
}

#[test]
fn ptdf_errors() {
    let n = bare(3, vec![line(1, 2, 0.1)]);
    assert!(matches!(compute_ptdf(&n, 1), Err(GridError::Disconnected)));
    let n = bare(2, vec![line(1, 2, 0.1)]);
    assert!(matches!(compute_ptdf(&n, 5), Err(GridError::UnknownSlack(5))));
}

#[test]
fn connection_matrices_select_buses() {
    let six = Case::embedded("sixbus").unwrap();
    let (hg, hw, hd, _) = connection_matrices(&six.network);
    assert_eq!(hg.shape(), (6, 3));
    for (j, bus) in [1, 2, 6].into_iter().enumerate() {
        assert_eq!(hg[(bus - 1, j)], 1.0);
        assert_eq!(hg.column(j).sum(), 1.0);
    }
    assert_eq!(hw.ncols(), 0);
    assert_eq!(hd.ncols(), 3);
    let nine = Case::embedded("ninebus").unwrap();
    let (_, _, _, hf) = connection_matrices(&nine.network);
    for (j, bus) in [5, 7, 9].into_iter().enumerate() {
        assert_eq!(hf[(bus - 1, j)], 1.0);
        assert_eq!(hf.column(j).sum(), 1.0);
    }
}

#[test]
fn embedded_ptdf_entries_are_bounded() {
    for name in ["sixbus", "ninebus"] {
        let c = Case::embedded(name).unwrap();
        let p = compute_ptdf(&c.network, c.network.slack_bus).unwrap();
        assert!(p.gamma.iter().all(|v| v.abs() <= 1.0 + 1e-12), "{name}");
    }
}

/// Random connected network: a spanning tree plus extra edges.
fn network_strategy() -> impl Strategy<Value = Network> {
    (3usize..8)
        .prop_flat_map(|n| {
            let parents: Vec<BoxedStrategy<usize>> = (1..n).map(|i| (0..i).boxed()).collect();
            let extra = proptest::collection::vec((0..n, 0..n, 0.01f64..1.0), 0..6);
            let xs = proptest::collection::vec(0.01f64..1.0, n - 1);
            (Just(n), parents, extra, xs)
        })
        .prop_map(|(n, parents, extra, xs)| {
            let mut lines: Vec<Line> = parents
                .iter()
                .enumerate()
                .map(|(i, &p)| line(p + 1, i + 2, xs[i]))
                .collect();
            lines.extend(extra.into_iter().filter(|(a, b, _)| a != b).map(|(a, b, x)| line(a + 1, b + 1, x)));
            bare(n, lines)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flows_satisfy_nodal_balance(net in network_strategy(), raw in proptest::collection::vec(-1.0f64..1.0, 8)) {
        let n = net.num_buses();
        let mut inj: Vec<f64> = raw[..n].to_vec();
        let total: f64 = inj.iter().sum();
        inj[0] -= total;
        let p = compute_ptdf(&net, 1).unwrap();
        let flows = p.flows(&inj);
        for bus in 1..=n {
            let out: f64 = net.lines.iter().zip(&flows).map(|(l, f)| {
                if l.from_bus == bus { *f } else if l.to_bus == bus { -*f } else { 0.0 }
            }).sum();
            prop_assert!((out - inj[bus - 1]).abs() < 1e-8, "bus {} out {} inj {}", bus, out, inj[bus - 1]);
        }
    }

    #[test]
    fn ptdf_ignores_uniform_reactance_scaling(net in network_strategy(), k in 0.1f64..10.0) {
        let mut scaled = net.clone();
        for l in &mut scaled.lines {
            l.reactance *= k;
        }
        let a = compute_ptdf(&net, 1).unwrap();
        let b = compute_ptdf(&scaled, 1).unwrap();
        prop_assert!((a.gamma - b.gamma).abs().max() < 1e-9);
    }

    #[test]
    fn leaf_bridge_carries_all_leaf_injection(net in network_strategy(), x in 0.01f64..1.0) {
        let n = net.num_buses();
        let mut lines = net.lines.clone();
        lines.push(line(2, n + 1, x));
        let grown = bare(n + 1, lines);
        let p = compute_ptdf(&grown, 1).unwrap();
        let l = grown.lines.len() - 1;
        prop_assert!((p.get(l, n + 1) + 1.0).abs() < 1e-9);
    }
}
