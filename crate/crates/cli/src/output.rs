use std::fs::File;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use flexmarket::clearing::{ClearingSolution, DecisionLayout, Side};
use serde::{Deserialize, Serialize};

/// Written next to every command's outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub case: String,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub timestamp_unix: u64,
}

impl Manifest {
    pub fn new(command: &str, case: &str, parameters: impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            case: case.to_string(),
            parameters: serde_json::to_value(parameters)?,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

pub fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

/// Six decimals; values that round to zero print without a sign.
pub fn f6(v: f64) -> String {
    if v.abs() < 5e-7 {
        "0.000000".into()
    } else {
        format!("{v:.6}")
    }
}

/// `period,kind,unit,bus,setpoint_mw,participation`
pub fn write_setpoints(path: &Path, layout: &DecisionLayout, sol: &ClearingSolution) -> Result<()> {
    let net = &layout.network;
    let base = net.power_base;
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["period", "kind", "unit", "bus", "setpoint_mw", "participation"])?;
    for (k, &t) in sol.periods.iter().enumerate() {
        for (g, gen) in net.generators.iter().enumerate() {
            w.write_record([
                (t + 1).to_string(),
                "generator".into(),
                (g + 1).to_string(),
                gen.bus.to_string(),
                f6(sol.pg[g][k] * base),
                f6(sol.bg[g][k]),
            ])?;
        }
        for (i, bid) in layout.bids.iter().enumerate() {
            if !bid.active(t) {
                continue;
            }
            w.write_record([
                (t + 1).to_string(),
                "aggregator".into(),
                (i + 1).to_string(),
                bid.bus.to_string(),
                f6(sol.pf[i][k] * base),
                f6(sol.bf[i][k]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `bus,alpha_r_minus,alpha_r_plus,alpha_e_minus,alpha_e_plus,reward`, per-unit.
pub fn write_acceptance(path: &Path, layout: &DecisionLayout, sol: &ClearingSolution) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["bus", "alpha_r_minus", "alpha_r_plus", "alpha_e_minus", "alpha_e_plus", "reward"])?;
    for (bid, a) in layout.bids.iter().zip(&sol.acceptance) {
        w.write_record([
            bid.bus.to_string(),
            f6(a.alpha_r_minus),
            f6(a.alpha_r_plus),
            f6(a.alpha_e_minus),
            f6(a.alpha_e_plus),
            f6(flexmarket::bids::RewardFunction::value(&bid.reward_function(), a)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per reformulated chance constraint.
pub fn write_chance(path: &Path, sol: &ClearingSolution) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["handle", "class", "side", "period", "eps", "margin_pu", "std_pu", "satisfaction", "binding"])?;
    for c in &sol.chance {
        w.write_record([
            c.handle.clone(),
            c.class.as_str().into(),
            match c.side {
                Side::Upper => "max".into(),
                Side::Lower => "min".into(),
            },
            (c.period + 1).to_string(),
            c.eps.to_string(),
            format!("{:.9}", c.margin),
            format!("{:.9}", c.std),
            f6(c.satisfaction),
            c.binding.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
