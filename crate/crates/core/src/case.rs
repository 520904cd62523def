//! JSON case documents and the embedded `sixbus` / `ninebus` fixtures.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::bids::MdfBid;
use crate::clearing::RiskParameters;
use crate::grid::{Generator, Line, Load, Network, WindUnit};
use crate::stochastic::WindModel;
use crate::CaseError;

const SIXBUS: &str = include_str!("../cases/sixbus.case");
const NINEBUS: &str = include_str!("../cases/ninebus.case");

/// Names accepted by [`Case::embedded`].
pub const EMBEDDED: [&str; 2] = ["sixbus", "ninebus"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseDoc {
    #[serde(default)]
    name: Option<String>,
    power_base_mva: f64,
    #[serde(default)]
    slack_bus: Option<usize>,
    buses: Vec<BusDoc>,
    lines: Vec<LineDoc>,
    generators: Vec<GenDoc>,
    #[serde(default)]
    wind_units: Vec<WindDoc>,
    loads: Vec<LoadDoc>,
    #[serde(default)]
    aggregators: Vec<AggDoc>,
    #[serde(default)]
    wind_forecast: Option<ForecastDoc>,
    #[serde(default)]
    risk: Option<RiskDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusDoc {
    id: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineDoc {
    from: usize,
    to: usize,
    reactance_pu: f64,
    flow_limit_mw: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenDoc {
    bus: usize,
    p_min_mw: f64,
    p_max_mw: f64,
    c2: f64,
    c1: f64,
    c0: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindDoc {
    bus: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadDoc {
    bus: usize,
    profile_mw: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AggDoc {
    bus: usize,
    t_start: usize,
    t_end: usize,
    r_min_pu: f64,
    r_max_pu: f64,
    e_min_pu: f64,
    e_max_pu: f64,
    gamma_p: f64,
    gamma_e: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForecastDoc {
    mean_pu: Vec<Vec<f64>>,
    covariance: CovDoc,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum CovDoc {
    DiagonalRelative { ratio: f64 },
    /// One `n_ω × n_ω` matrix per period.
    Explicit { matrices: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RiskDoc {
    eps_gen: RiskValue,
    eps_line: RiskValue,
    eps_power: RiskValue,
    eps_energy: RiskValue,
}

/// A single value for every entity, a list in entity order, or a map keyed by
/// 1-based generator/line index or aggregator bus.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RiskValue {
    Scalar(f64),
    List(Vec<f64>),
    Map(BTreeMap<String, f64>),
}

impl RiskValue {
    fn expand(&self, field: &str, keys: &[usize]) -> Result<Vec<f64>, CaseError> {
        match self {
            RiskValue::Scalar(v) => Ok(vec![*v; keys.len()]),
            RiskValue::List(v) if v.len() == keys.len() => Ok(v.clone()),
            RiskValue::List(v) => Err(CaseError::Invalid(format!(
                "risk.{field} lists {} values for {} entities",
                v.len(),
                keys.len()
            ))),
            RiskValue::Map(m) => {
                let mut parsed = BTreeMap::new();
                for (k, v) in m {
                    let id: usize = k
                        .parse()
                        .map_err(|_| CaseError::Invalid(format!("risk.{field}: key `{k}` is not an integer id")))?;
                    if !keys.contains(&id) {
                        return Err(CaseError::Invalid(format!("risk.{field}: unknown id {id}")));
                    }
                    parsed.insert(id, *v);
                }
                keys.iter()
                    .map(|id| {
                        parsed
                            .get(id)
                            .copied()
                            .ok_or_else(|| CaseError::Invalid(format!("risk.{field}: no value for id {id}")))
                    })
                    .collect()
            }
        }
    }
}

/// A loaded case: network, wind forecast, aggregator bids and risk levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub name: String,
    pub network: Network,
    pub wind: WindModel,
    pub bids: Vec<MdfBid>,
    pub risk: RiskParameters,
}

impl Case {
    /// Parses a case document. `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Case, CaseError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: CaseDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.inner();
            CaseError::Parse {
                path: if path == "." { origin.to_string() } else { format!("{origin}: {path}") },
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })?;
        Case::from_doc(doc, origin)
    }

    /// One of [`EMBEDDED`].
    pub fn embedded(name: &str) -> Result<Case, CaseError> {
        let text = match name {
            "sixbus" => SIXBUS,
            "ninebus" => NINEBUS,
            other => return Err(CaseError::UnknownCase(other.to_string())),
        };
        Case::parse(text, &format!("{name}.case"))
    }

    pub fn from_path(path: &Path) -> Result<Case, CaseError> {
        let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Case::parse(&text, &path.display().to_string())
    }

    /// An embedded case name or a file path.
    pub fn load(spec: &str) -> Result<Case, CaseError> {
        if EMBEDDED.contains(&spec) {
            Case::embedded(spec)
        } else {
            Case::from_path(Path::new(spec))
        }
    }

    fn from_doc(doc: CaseDoc, origin: &str) -> Result<Case, CaseError> {
        let n = doc.buses.len();
        let mut ids: Vec<usize> = doc.buses.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        if ids != (1..=n).collect::<Vec<_>>() {
            return Err(CaseError::Invalid(format!("{origin}: bus ids must be 1..={n} without gaps")));
        }
        let base = doc.power_base_mva;
        let lines = doc
            .lines
            .iter()
            .map(|l| Line {
                from_bus: l.from,
                to_bus: l.to,
                reactance: l.reactance_pu,
                flow_limit_mw: l.flow_limit_mw,
            })
            .collect();
        let generators = doc
            .generators
            .iter()
            .map(|g| Generator {
                bus: g.bus,
                p_min_mw: g.p_min_mw,
                p_max_mw: g.p_max_mw,
                c2: g.c2,
                c1: g.c1,
                c0: g.c0,
            })
            .collect();
        let wind_units: Vec<WindUnit> = doc.wind_units.iter().map(|w| WindUnit { bus: w.bus }).collect();
        let loads = doc
            .loads
            .iter()
            .map(|l| Load {
                bus: l.bus,
                profile: l.profile_mw.iter().map(|p| p / base).collect(),
            })
            .collect();
        let agg_buses: Vec<usize> = doc.aggregators.iter().map(|a| a.bus).collect();
        let network = Network::new(n, lines, generators, wind_units, loads, agg_buses.clone(), base, doc.slack_bus)?;
        let horizon = network.horizon();

        let bids: Vec<MdfBid> = doc
            .aggregators
            .iter()
            .map(|a| MdfBid {
                bus: a.bus,
                t_start: a.t_start,
                t_end: a.t_end,
                r_min: a.r_min_pu,
                r_max: a.r_max_pu,
                e_min: a.e_min_pu,
                e_max: a.e_max_pu,
                gamma_p: a.gamma_p,
                gamma_e: a.gamma_e,
            })
            .collect();
        for b in &bids {
            b.validate()?;
            crate::bids::validate_window(b, horizon)?;
        }

        let nw = network.wind_units.len();
        let wind = match doc.wind_forecast {
            None if nw == 0 => WindModel::deterministic(vec![Vec::new(); horizon])?,
            None => return Err(CaseError::Invalid(format!("{origin}: wind units without a wind_forecast"))),
            Some(f) => {
                if f.mean_pu.len() != horizon {
                    return Err(CaseError::Invalid(format!(
                        "{origin}: wind_forecast.mean_pu has {} periods, loads have {horizon}",
                        f.mean_pu.len()
                    )));
                }
                if let Some(t) = f.mean_pu.iter().position(|r| r.len() != nw) {
                    return Err(CaseError::Invalid(format!(
                        "{origin}: wind_forecast.mean_pu[{t}] has {} entries for {nw} wind units",
                        f.mean_pu[t].len()
                    )));
                }
                match f.covariance {
                    CovDoc::DiagonalRelative { ratio } => WindModel::diagonal_relative(f.mean_pu, ratio)?,
                    CovDoc::Explicit { matrices } => {
                        let mut cov = Vec::with_capacity(matrices.len());
                        for (t, m) in matrices.iter().enumerate() {
                            if m.len() != nw || m.iter().any(|r| r.len() != nw) {
                                return Err(CaseError::Invalid(format!(
                                    "{origin}: wind_forecast.covariance.matrices[{t}] is not {nw}×{nw}"
                                )));
                            }
                            cov.push(DMatrix::from_fn(nw, nw, |i, j| m[i][j]));
                        }
                        WindModel::new(f.mean_pu, cov)?
                    }
                }
            }
        };

        let gen_ids: Vec<usize> = (1..=network.generators.len()).collect();
        let line_ids: Vec<usize> = (1..=network.lines.len()).collect();
        let risk = match doc.risk {
            Some(r) => RiskParameters {
                eps_gen: r.eps_gen.expand("eps_gen", &gen_ids)?,
                eps_line: r.eps_line.expand("eps_line", &line_ids)?,
                eps_power: r.eps_power.expand("eps_power", &agg_buses)?,
                eps_energy: r.eps_energy.expand("eps_energy", &agg_buses)?,
            },
            None => RiskParameters::uniform(&network, bids.len(), 0.5, 0.5, 0.5, 0.5),
        };
        risk.validate(&network, bids.len())
            .map_err(|e| CaseError::Invalid(format!("{origin}: {e}")))?;

        Ok(Case {
            name: doc.name.unwrap_or_else(|| origin.to_string()),
            network,
            wind,
            bids,
            risk,
        })
    }

    /// Copy of the case with every bid's reward coefficients replaced.
    pub fn with_rewards(&self, gamma_p: Option<f64>, gamma_e: Option<f64>) -> Case {
        let mut c = self.clone();
        for b in &mut c.bids {
            if let Some(g) = gamma_p {
                b.gamma_p = g;
            }
            if let Some(g) = gamma_e {
                b.gamma_e = g;
            }
        }
        c
    }
}
