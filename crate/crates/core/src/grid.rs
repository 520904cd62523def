//! Transmission network, DC power flow sensitivities and connection matrices.
//!
//! Quantities are stored per-unit on [`Network::power_base`]; MW only appears
//! in the case document and in reports.

use nalgebra::DMatrix;

use crate::GridError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BusKind {
    pub generator: bool,
    pub wind: bool,
    pub load: bool,
    pub aggregator: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// 1-based, contiguous.
    pub id: usize,
    pub kind: BusKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    pub reactance: f64,
    pub flow_limit_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    /// $/MW²h
    pub c2: f64,
    /// $/MWh
    pub c1: f64,
    /// $/h
    pub c0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindUnit {
    pub bus: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    /// Base load per period, per-unit.
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub wind_units: Vec<WindUnit>,
    pub loads: Vec<Load>,
    pub aggregator_buses: Vec<usize>,
    /// MVA
    pub power_base: f64,
    pub slack_bus: usize,
}

impl Network {
    /// Validates ids and references and fills in the bus kind flags.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_buses: usize,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        wind_units: Vec<WindUnit>,
        loads: Vec<Load>,
        aggregator_buses: Vec<usize>,
        power_base: f64,
        slack_bus: Option<usize>,
    ) -> Result<Self, GridError> {
        if num_buses == 0 {
            return Err(GridError::Invalid("network has no buses".into()));
        }
        if !(power_base > 0.0) || !power_base.is_finite() {
            return Err(GridError::Invalid(format!("power base must be positive, got {power_base}")));
        }
        let check = |what: String, bus: usize| {
            if bus == 0 || bus > num_buses {
                Err(GridError::DanglingBus { what, bus })
            } else {
                Ok(())
            }
        };
        let mut buses: Vec<Bus> = (1..=num_buses)
            .map(|id| Bus {
                id,
                kind: BusKind::default(),
            })
            .collect();
        for (k, l) in lines.iter().enumerate() {
            check(format!("line {}", k + 1), l.from_bus)?;
            check(format!("line {}", k + 1), l.to_bus)?;
            if l.from_bus == l.to_bus {
                return Err(GridError::SelfLoop { line: k + 1, bus: l.from_bus });
            }
            if !(l.reactance > 0.0) || !l.reactance.is_finite() {
                return Err(GridError::Invalid(format!(
                    "line {} reactance must be positive, got {}",
                    k + 1,
                    l.reactance
                )));
            }
            if !(l.flow_limit_mw > 0.0) {
                return Err(GridError::Invalid(format!(
                    "line {} flow limit must be positive, got {}",
                    k + 1,
                    l.flow_limit_mw
                )));
            }
        }
        for (k, g) in generators.iter().enumerate() {
            check(format!("generator {}", k + 1), g.bus)?;
            if !(g.p_min_mw <= g.p_max_mw) {
                return Err(GridError::Invalid(format!(
                    "generator {} has p_min {} > p_max {}",
                    k + 1,
                    g.p_min_mw,
                    g.p_max_mw
                )));
            }
            if !(g.c2 >= 0.0) || ![g.c1, g.c0].iter().all(|c| c.is_finite()) {
                return Err(GridError::Invalid(format!(
                    "generator {} cost must be convex and finite",
                    k + 1
                )));
            }
            buses[g.bus - 1].kind.generator = true;
        }
        for (k, w) in wind_units.iter().enumerate() {
            check(format!("wind unit {}", k + 1), w.bus)?;
            if buses[w.bus - 1].kind.wind {
                return Err(GridError::Invalid(format!("two wind units at bus {}", w.bus)));
            }
            buses[w.bus - 1].kind.wind = true;
        }
        let horizon = loads.first().map(|l| l.profile.len());
        for l in &loads {
            check("load".into(), l.bus)?;
            if Some(l.profile.len()) != horizon {
                return Err(GridError::Invalid(format!(
                    "load at bus {} has {} periods, expected {}",
                    l.bus,
                    l.profile.len(),
                    horizon.unwrap_or(0)
                )));
            }
            if l.profile.iter().any(|v| !v.is_finite()) {
                return Err(GridError::Invalid(format!("load at bus {} is not finite", l.bus)));
            }
            buses[l.bus - 1].kind.load = true;
        }
        for &b in &aggregator_buses {
            check("aggregator".into(), b)?;
            if buses[b - 1].kind.aggregator {
                return Err(GridError::Invalid(format!("two aggregators at bus {b}")));
            }
            buses[b - 1].kind.aggregator = true;
        }
        let slack_bus = match slack_bus {
            Some(s) => {
                check("slack".into(), s)?;
                s
            }
            None => generators
                .iter()
                .map(|g| g.bus)
                .min()
                .ok_or_else(|| GridError::Invalid("no slack bus and no generator to default to".into()))?,
        };
        Ok(Network {
            buses,
            lines,
            generators,
            wind_units,
            loads,
            aggregator_buses,
            power_base,
            slack_bus,
        })
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    /// Number of periods in the load profiles (0 with no loads).
    pub fn horizon(&self) -> usize {
        self.loads.first().map_or(0, |l| l.profile.len())
    }

    /// Total base load in period `t` (0-based), per-unit.
    pub fn total_load(&self, t: usize) -> f64 {
        self.loads.iter().map(|l| l.profile[t]).sum()
    }

    /// 0-based period with the largest total base load.
    pub fn peak_period(&self) -> usize {
        (0..self.horizon())
            .max_by(|&a, &b| self.total_load(a).total_cmp(&self.total_load(b)))
            .unwrap_or(0)
    }

    /// Line limit in per-unit.
    pub fn flow_limit(&self, line: usize) -> f64 {
        self.lines[line].flow_limit_mw / self.power_base
    }

    /// Per-unit cost coefficients `(c₂·base², c₁·base, c₀)`.
    pub fn cost_pu(&self, g: usize) -> (f64, f64, f64) {
        let gen = &self.generators[g];
        let b = self.power_base;
        (gen.c2 * b * b, gen.c1 * b, gen.c0)
    }

    pub fn p_min(&self, g: usize) -> f64 {
        self.generators[g].p_min_mw / self.power_base
    }

    pub fn p_max(&self, g: usize) -> f64 {
        self.generators[g].p_max_mw / self.power_base
    }

    /// Nodal base-load injection `H_d·P_d` in period `t`, indexed by bus − 1.
    pub fn load_at_buses(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_buses()];
        for l in &self.loads {
            out[l.bus - 1] += l.profile[t];
        }
        out
    }
}

/// Line-flow sensitivities to bus injections.
#[derive(Debug, Clone, PartialEq)]
pub struct PtdfMatrix {
    /// L × N, column `i` for bus `i + 1`.
    pub gamma: DMatrix<f64>,
    pub slack_bus: usize,
}

impl PtdfMatrix {
    /// Sensitivity of line `l` (0-based) to an injection at `bus` (1-based).
    pub fn get(&self, l: usize, bus: usize) -> f64 {
        self.gamma[(l, bus - 1)]
    }

    /// `Γ·p` for a nodal injection vector indexed by bus − 1.
    pub fn flows(&self, injection: &[f64]) -> Vec<f64> {
        (0..self.gamma.nrows())
            .map(|l| {
                injection
                    .iter()
                    .enumerate()
                    .map(|(i, p)| self.gamma[(l, i)] * p)
                    .sum()
            })
            .collect()
    }
}

/// Builds `Γ = diag(b)·A·B̃⁻¹` with the slack row and column of `B` removed.
pub fn compute_ptdf(network: &Network, slack: usize) -> Result<PtdfMatrix, GridError> {
    let n = network.num_buses();
    if slack == 0 || slack > n {
        return Err(GridError::UnknownSlack(slack));
    }
    let nl = network.lines.len();
    let s = slack - 1;
    let reduced = |i: usize| if i < s { Some(i) } else if i > s { Some(i - 1) } else { None };

    let mut b_red = DMatrix::<f64>::zeros(n - 1, n - 1);
    let mut ba = DMatrix::<f64>::zeros(nl, n - 1);
    for (l, line) in network.lines.iter().enumerate() {
        let b = 1.0 / line.reactance;
        let f = reduced(line.from_bus - 1);
        let t = reduced(line.to_bus - 1);
        if let Some(f) = f {
            b_red[(f, f)] += b;
            ba[(l, f)] += b;
        }
        if let Some(t) = t {
            b_red[(t, t)] += b;
            ba[(l, t)] -= b;
        }
        if let (Some(f), Some(t)) = (f, t) {
            b_red[(f, t)] -= b;
            b_red[(t, f)] -= b;
        }
    }
    let gamma_red = if n > 1 {
        let chol = b_red.clone().cholesky().ok_or(GridError::Disconnected)?;
        // Guard against near-singular factors from floating components.
        let diag_min = (0..n - 1).map(|i| chol.l()[(i, i)]).fold(f64::INFINITY, f64::min);
        let diag_max = (0..n - 1).map(|i| chol.l()[(i, i)]).fold(0.0_f64, f64::max);
        if !(diag_min > 1e-8 * diag_max) {
            return Err(GridError::Disconnected);
        }
        // Γ̃ = (B̃⁻¹ (bA)ᵀ)ᵀ, B̃ symmetric.
        chol.solve(&ba.transpose()).transpose()
    } else {
        DMatrix::zeros(nl, 0)
    };
    let mut gamma = DMatrix::<f64>::zeros(nl, n);
    for i in 0..n {
        if let Some(r) = reduced(i) {
            gamma.set_column(i, &gamma_red.column(r));
        }
    }
    Ok(PtdfMatrix { gamma, slack_bus: slack })
}

/// Bus connection matrices `(H_g, H_w, H_d, H_f)`, each N × units.
pub fn connection_matrices(
    network: &Network,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = network.num_buses();
    let build = |buses: Vec<usize>| {
        let mut h = DMatrix::zeros(n, buses.len());
        for (j, b) in buses.into_iter().enumerate() {
            h[(b - 1, j)] = 1.0;
        }
        h
    };
    (
        build(network.generators.iter().map(|g| g.bus).collect()),
        build(network.wind_units.iter().map(|w| w.bus).collect()),
        build(network.loads.iter().map(|l| l.bus).collect()),
        build(network.aggregator_buses.clone()),
    )
}

/// Parses a case document and returns its network.
pub fn load_case(document: &str) -> Result<Network, crate::CaseError> {
    crate::case::Case::parse(document, "case").map(|c| c.network)
}
