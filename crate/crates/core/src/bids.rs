//! Multi-dimensional flexibility bids offered by load aggregators.

use flexmarket_conic::{LinExpr, Var};
use serde::{Deserialize, Serialize};

use crate::BidError;

/// Virtual-battery offer of one aggregator. Power and energy are per-unit;
/// periods are 1-based and inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct MdfBid {
    pub bus: usize,
    pub t_start: usize,
    pub t_end: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub e_min: f64,
    pub e_max: f64,
    /// $ per p.u. of accepted power range.
    pub gamma_p: f64,
    /// $ per p.u.h of accepted energy range.
    pub gamma_e: f64,
}

impl MdfBid {
    pub fn validate(&self) -> Result<(), BidError> {
        let bad = |what: &str| Err(BidError::Invalid { bus: self.bus, reason: what.to_string() });
        if !(self.r_min <= 0.0 && self.r_max >= 0.0) {
            return bad("power range must satisfy r_min <= 0 <= r_max");
        }
        if !(self.e_min <= 0.0 && self.e_max >= 0.0) {
            return bad("energy range must satisfy e_min <= 0 <= e_max");
        }
        if !(self.gamma_p >= 0.0 && self.gamma_e >= 0.0) || !self.gamma_p.is_finite() || !self.gamma_e.is_finite() {
            return bad("reward coefficients must be nonnegative and finite");
        }
        if [self.r_min, self.r_max, self.e_min, self.e_max].iter().any(|v| !v.is_finite()) {
            return bad("ranges must be finite");
        }
        Ok(())
    }

    /// Whether the 0-based period `t` lies in the service window.
    pub fn active(&self, t: usize) -> bool {
        t + 1 >= self.t_start && t < self.t_end
    }

    pub fn reward_function(&self) -> LinearReward {
        LinearReward {
            gamma_p: self.gamma_p,
            gamma_e: self.gamma_e,
        }
    }
}

/// Cleared portion of a bid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MdfAcceptance {
    pub alpha_r_minus: f64,
    pub alpha_r_plus: f64,
    pub alpha_e_minus: f64,
    pub alpha_e_plus: f64,
}

impl MdfAcceptance {
    /// Checks the acceptance box against `bid`, allowing `tol` slack.
    pub fn check(&self, bid: &MdfBid, tol: f64) -> Result<(), BidError> {
        let within = |v: f64, lo: f64, hi: f64| v >= lo - tol && v <= hi + tol;
        let ok = within(self.alpha_r_minus, bid.r_min, 0.0)
            && within(self.alpha_r_plus, 0.0, bid.r_max)
            && within(self.alpha_e_minus, bid.e_min, 0.0)
            && within(self.alpha_e_plus, 0.0, bid.e_max);
        if ok {
            Ok(())
        } else {
            Err(BidError::OutsideBox { bus: bid.bus })
        }
    }
}

/// Decision variables of one acceptance inside a conic program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceVars {
    pub r_minus: Var,
    pub r_plus: Var,
    pub e_minus: Var,
    pub e_plus: Var,
}

/// Payment for cleared flexibility. Implementations must be convex in the
/// acceptance and expressible as a cost in a conic program.
pub trait RewardFunction {
    fn value(&self, acc: &MdfAcceptance) -> f64;
    /// Objective contribution in terms of the acceptance variables.
    fn cost(&self, vars: &AcceptanceVars) -> LinExpr;
}

/// `γᴾ(α^{R+} − α^{R−}) + γᴱ(α^{E+} − α^{E−})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearReward {
    pub gamma_p: f64,
    pub gamma_e: f64,
}

impl RewardFunction for LinearReward {
    fn value(&self, a: &MdfAcceptance) -> f64 {
        self.gamma_p * (a.alpha_r_plus - a.alpha_r_minus) + self.gamma_e * (a.alpha_e_plus - a.alpha_e_minus)
    }

    fn cost(&self, v: &AcceptanceVars) -> LinExpr {
        LinExpr::term(v.r_plus, self.gamma_p)
            .with(v.r_minus, -self.gamma_p)
            .with(v.e_plus, self.gamma_e)
            .with(v.e_minus, -self.gamma_e)
    }
}

/// Reward owed for `acc`, after checking it against the bid box.
pub fn reward(bid: &MdfBid, acc: &MdfAcceptance) -> Result<f64, BidError> {
    acc.check(bid, 0.0)?;
    Ok(bid.reward_function().value(acc))
}

/// `1 ≤ t_start ≤ t_end ≤ horizon`.
pub fn validate_window(bid: &MdfBid, horizon: usize) -> Result<(), BidError> {
    if bid.t_start >= 1 && bid.t_start <= bid.t_end && bid.t_end <= horizon {
        Ok(())
    } else {
        Err(BidError::Window {
            bus: bid.bus,
            start: bid.t_start,
            end: bid.t_end,
            horizon,
        })
    }
}
