use approx::assert_abs_diff_eq;
use flexmarket::bids::*;
use flexmarket::BidError;
use proptest::prelude::*;

fn bid(gp: f64, ge: f64) -> MdfBid {
    MdfBid {
        bus: 3,
        t_start: 13,
        t_end: 19,
        r_min: -0.1,
        r_max: 0.2,
        e_min: -0.5,
        e_max: 0.5,
        gamma_p: gp,
        gamma_e: ge,
    }
}

fn acc(a: [f64; 4]) -> MdfAcceptance {
    MdfAcceptance {
        alpha_r_minus: a[0],
        alpha_r_plus: a[1],
        alpha_e_minus: a[2],
        alpha_e_plus: a[3],
    }
}

#[test]
fn low_reward_example() {
    let r = reward(&bid(50.0, 50.0), &acc([0.0, 0.129, -0.5, 0.0])).unwrap();
    assert_abs_diff_eq!(r, 31.45, epsilon = 1e-9);
}

#[test]
fn nothing_accepted_nothing_paid() {
    assert_eq!(reward(&bid(50.0, 50.0), &acc([0.0; 4])).unwrap(), 0.0);
}

#[test]
fn high_reward_example() {
    let r = reward(&bid(500.0, 500.0), &acc([0.0, 0.095, -0.5, 0.0])).unwrap();
    assert_abs_diff_eq!(r, 297.5, epsilon = 1e-9);
}

#[test]
fn acceptance_outside_box() {
    let err = reward(&bid(1.0, 1.0), &acc([0.0, 0.3, 0.0, 0.0])).unwrap_err();
    assert!(matches!(err, BidError::OutsideBox { bus: 3 }));
    assert!(reward(&bid(1.0, 1.0), &acc([0.0, 0.0, 0.1, 0.0])).is_err());
}

#[test]
fn windows() {
    assert!(validate_window(&bid(0.0, 0.0), 24).is_ok());
    let mut b = bid(0.0, 0.0);
    b.t_start = 20;
    assert!(matches!(validate_window(&b, 24), Err(BidError::Window { start: 20, end: 19, .. })));
    b.t_start = 1;
    b.t_end = 25;
    assert!(validate_window(&b, 24).is_err());
    b.t_start = 0;
    b.t_end = 3;
    assert!(validate_window(&b, 24).is_err());
}

#[test]
fn active_periods_are_zero_based() {
    let b = bid(0.0, 0.0);
    let active: Vec<usize> = (0..24).filter(|&t| b.active(t)).collect();
    assert_eq!(active, (12..19).collect::<Vec<_>>());
}

#[test]
fn malformed_bids() {
    let mut b = bid(1.0, 1.0);
    b.r_min = 0.1;
    assert!(b.validate().is_err());
    let mut b = bid(-1.0, 1.0);
    assert!(b.validate().is_err());
    b.gamma_p = f64::INFINITY;
    assert!(b.validate().is_err());
}

fn in_box() -> impl Strategy<Value = MdfAcceptance> {
    (-0.1f64..=0.0, 0.0f64..=0.2, -0.5f64..=0.0, 0.0f64..=0.5).prop_map(|(a, b, c, d)| acc([a, b, c, d]))
}

proptest! {
    #[test]
    fn reward_is_nonnegative_and_monotone(a in in_box(), gp in 0.0f64..1000.0, ge in 0.0f64..1000.0, k in 0.0f64..1.0) {
        let b = bid(gp, ge);
        let full = reward(&b, &a).unwrap();
        prop_assert!(full >= 0.0);
        let shrunk = acc([a.alpha_r_minus * k, a.alpha_r_plus * k, a.alpha_e_minus * k, a.alpha_e_plus * k]);
        prop_assert!(reward(&b, &shrunk).unwrap() <= full + 1e-9);
    }

    #[test]
    fn reward_is_linear_along_segments(a in in_box(), c in in_box(), gp in 0.0f64..1000.0, ge in 0.0f64..1000.0) {
        let b = bid(gp, ge);
        let mid = acc([
            (a.alpha_r_minus + c.alpha_r_minus) / 2.0,
            (a.alpha_r_plus + c.alpha_r_plus) / 2.0,
            (a.alpha_e_minus + c.alpha_e_minus) / 2.0,
            (a.alpha_e_plus + c.alpha_e_plus) / 2.0,
        ]);
        let avg = (reward(&b, &a).unwrap() + reward(&b, &c).unwrap()) / 2.0;
        prop_assert!((reward(&b, &mid).unwrap() - avg).abs() <= 1e-9 * (1.0 + avg));
    }
}
