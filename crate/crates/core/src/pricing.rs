//! Locational marginal prices from the clearing multipliers.

use std::io::Write;

use crate::clearing::PricingDuals;
use crate::grid::PtdfMatrix;
use crate::PricingError;

/// Prices in $/MWh, `prices[k][bus − 1]` for the `k`-th cleared period.
#[derive(Debug, Clone, PartialEq)]
pub struct LmpProfile {
    /// 0-based periods.
    pub periods: Vec<usize>,
    pub prices: Vec<Vec<f64>>,
}

impl LmpProfile {
    pub fn num_buses(&self) -> usize {
        self.prices.first().map_or(0, Vec::len)
    }

    /// Price series of `bus` (1-based).
    pub fn series(&self, bus: usize) -> Vec<f64> {
        self.prices.iter().map(|r| r[bus - 1]).collect()
    }

    /// Price at `bus` (1-based) in 0-based period `t`.
    pub fn at(&self, bus: usize, t: usize) -> Option<f64> {
        let k = self.periods.iter().position(|&p| p == t)?;
        Some(self.prices[k][bus - 1])
    }
}

/// `LMP_i = (λ − Σ_l Γ_{l,i}(μ⁺_l − μ⁻_l)) / base`: the marginal cost of one
/// more unit of load at bus `i`, converted from $/p.u.h to $/MWh.
pub fn lmps_from_duals(duals: &PricingDuals, periods: &[usize], ptdf: &PtdfMatrix, power_base: f64) -> LmpProfile {
    let n = ptdf.gamma.ncols();
    let nl = ptdf.gamma.nrows();
    let prices = (0..periods.len())
        .map(|k| {
            (0..n)
                .map(|i| {
                    let congestion: f64 = (0..nl)
                        .map(|l| ptdf.gamma[(l, i)] * (duals.line_up[l][k] - duals.line_dn[l][k]))
                        .sum();
                    (duals.balance[k] - congestion) / power_base
                })
                .collect()
        })
        .collect();
    LmpProfile {
        periods: periods.to_vec(),
        prices,
    }
}

/// Mean and population standard deviation of one bus's price series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmpStats {
    pub bus: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Statistics for each of `buses` (1-based) over the cleared periods.
pub fn lmp_stats(profile: &LmpProfile, buses: &[usize]) -> Result<Vec<LmpStats>, PricingError> {
    if profile.prices.is_empty() {
        return Err(PricingError::Empty);
    }
    buses
        .iter()
        .map(|&bus| {
            if bus == 0 || bus > profile.num_buses() {
                return Err(PricingError::UnknownBus(bus));
            }
            let s = profile.series(bus);
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            Ok(LmpStats {
                bus,
                mean,
                std: var.sqrt(),
                min: s.iter().copied().fold(f64::INFINITY, f64::min),
                max: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

/// Long-format CSV: `period,bus,lmp_usd_per_mwh`, periods 1-based.
pub fn write_lmp_csv<W: Write>(profile: &LmpProfile, out: W) -> Result<(), PricingError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["period", "bus", "lmp_usd_per_mwh"])?;
    for (k, &t) in profile.periods.iter().enumerate() {
        for (i, p) in profile.prices[k].iter().enumerate() {
            w.write_record([(t + 1).to_string(), (i + 1).to_string(), format!("{p:.6}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_lmp_stats_csv<W: Write>(stats: &[LmpStats], out: W) -> Result<(), PricingError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bus", "mean", "std", "min", "max"])?;
    for s in stats {
        w.write_record([
            s.bus.to_string(),
            format!("{:.6}", s.mean),
            format!("{:.6}", s.std),
            format!("{:.6}", s.min),
            format!("{:.6}", s.max),
        ])?;
    }
    w.flush()?;
    Ok(())
}
