//! Ex-post Monte Carlo validation: replay the affine recourse policy on
//! sampled wind deviations and count limit violations.

use std::io::Write;

use rayon::prelude::*;

use crate::clearing::{ConstraintClass, DecisionLayout, DispatchPolicy, Side};
use crate::stochastic::{sample_deviations, worker_seed, DeviationSampler, DeviationSamples, Family, SAMPLE_CHUNK};
use crate::ValidateError;

/// Realized values closer than this to a limit (per-unit) do not count as
/// violations; it absorbs solver round-off at deterministic optima.
pub const VIOLATION_TOL: f64 = 1e-7;

/// Recourse data that does not depend on the sample.
struct Recourse<'a> {
    layout: &'a DecisionLayout,
    policy: &'a DispatchPolicy,
    /// Set-point flow `[k][l]`.
    base_flow: Vec<Vec<f64>>,
    /// `Σ Γ_{l,·}β` over generators and aggregators, `[k][l]`.
    shared: Vec<Vec<f64>>,
    /// `Γ_{l,w}`, `[l][w]`.
    gamma_w: Vec<Vec<f64>>,
}

/// Realized quantities of one sample in one period.
#[derive(Debug, Clone, Default, PartialEq)]
struct PeriodValues {
    pg: Vec<f64>,
    pf: Vec<f64>,
    energy: Vec<f64>,
    flows: Vec<f64>,
}

impl<'a> Recourse<'a> {
    fn new(layout: &'a DecisionLayout, policy: &'a DispatchPolicy) -> Result<Self, ValidateError> {
        let net = &layout.network;
        let ptdf = &layout.ptdf;
        let ng = net.generators.len();
        let nb = layout.bids.len();
        let nk = layout.periods.len();
        let shape_ok = policy.periods == layout.periods
            && policy.pg.len() == ng
            && policy.bg.len() == ng
            && policy.pf.len() == nb
            && policy.bf.len() == nb
            && policy.acceptance.len() == nb
            && policy.pg.iter().chain(&policy.bg).chain(&policy.pf).chain(&policy.bf).all(|r| r.len() == nk);
        if !shape_ok {
            return Err(ValidateError::Shape("dispatch policy does not match the case".into()));
        }
        let nl = net.lines.len();
        let mut base_flow = vec![vec![0.0; nl]; nk];
        let mut shared = vec![vec![0.0; nl]; nk];
        for (k, &t) in layout.periods.iter().enumerate() {
            let mut inj = vec![0.0; net.num_buses()];
            let mut beta = vec![0.0; net.num_buses()];
            for (g, gen) in net.generators.iter().enumerate() {
                inj[gen.bus - 1] += policy.pg[g][k];
                beta[gen.bus - 1] += policy.bg[g][k];
            }
            for (i, bid) in layout.bids.iter().enumerate() {
                inj[bid.bus - 1] += policy.pf[i][k];
                beta[bid.bus - 1] += policy.bf[i][k];
            }
            for (w, u) in net.wind_units.iter().enumerate() {
                inj[u.bus - 1] += layout.wind.mean[t][w];
            }
            for (bus, d) in net.load_at_buses(t).iter().enumerate() {
                inj[bus] -= d;
            }
            base_flow[k] = ptdf.flows(&inj);
            shared[k] = ptdf.flows(&beta);
        }
        let gamma_w = (0..nl)
            .map(|l| net.wind_units.iter().map(|u| ptdf.get(l, u.bus)).collect())
            .collect();
        Ok(Recourse {
            layout,
            policy,
            base_flow,
            shared,
            gamma_w,
        })
    }

    /// Advances one period. `energy` carries the state of charge between
    /// calls and must start at zero.
    fn step(&self, k: usize, omega: &[f64], energy: &mut [f64], out: &mut PeriodValues) {
        let p = self.policy;
        let big_omega: f64 = omega.iter().sum();
        out.pg.clear();
        out.pg.extend((0..p.pg.len()).map(|g| p.pg[g][k] - p.bg[g][k] * big_omega));
        out.pf.clear();
        out.pf.extend((0..p.pf.len()).map(|i| p.pf[i][k] - p.bf[i][k] * big_omega));
        for (e, pf) in energy.iter_mut().zip(&out.pf) {
            *e -= pf;
        }
        out.energy.clear();
        out.energy.extend_from_slice(energy);
        out.flows.clear();
        out.flows.extend((0..self.gamma_w.len()).map(|l| {
            let wind: f64 = self.gamma_w[l].iter().zip(omega).map(|(g, w)| g * w).sum();
            self.base_flow[k][l] + wind - self.shared[k][l] * big_omega
        }));
    }

    /// Layout position of each sampled period; samples must start at the
    /// first cleared period so the state of charge starts from zero.
    fn positions(&self, samples: &DeviationSamples) -> Result<Vec<usize>, ValidateError> {
        let periods = &self.layout.periods;
        if samples.num_units != self.layout.network.wind_units.len() {
            return Err(ValidateError::Shape(format!(
                "samples have {} wind units, case has {}",
                samples.num_units,
                self.layout.network.wind_units.len()
            )));
        }
        if samples.periods.start != periods[0] {
            return Err(ValidateError::Shape(format!(
                "samples start at period {}, dispatch at {}",
                samples.periods.start + 1,
                periods[0] + 1
            )));
        }
        samples
            .periods
            .clone()
            .map(|t| {
                periods.iter().position(|&p| p == t).ok_or_else(|| {
                    ValidateError::Shape(format!("period {} is not part of the dispatch", t + 1))
                })
            })
            .collect()
    }
}

/// Realized outputs per sample and period, row-major `[sample][period][unit]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Realized {
    pub count: usize,
    /// 0-based periods.
    pub periods: Vec<usize>,
    pub num_generators: usize,
    pub num_bids: usize,
    pub num_lines: usize,
    pg: Vec<f64>,
    pf: Vec<f64>,
    energy: Vec<f64>,
    flows: Vec<f64>,
}

impl Realized {
    fn slot(&self, s: usize, t: usize, width: usize) -> std::ops::Range<usize> {
        let k = self.periods.iter().position(|&p| p == t).expect("period not simulated");
        let off = (s * self.periods.len() + k) * width;
        off..off + width
    }

    pub fn pg(&self, s: usize, t: usize) -> &[f64] {
        &self.pg[self.slot(s, t, self.num_generators)]
    }

    pub fn pf(&self, s: usize, t: usize) -> &[f64] {
        &self.pf[self.slot(s, t, self.num_bids)]
    }

    /// State of charge after period `t`.
    pub fn energy(&self, s: usize, t: usize) -> &[f64] {
        &self.energy[self.slot(s, t, self.num_bids)]
    }

    pub fn flows(&self, s: usize, t: usize) -> &[f64] {
        &self.flows[self.slot(s, t, self.num_lines)]
    }
}

/// Applies `P = P̄ − βΩ` to every sample. Samples must start at the first
/// dispatched period.
pub fn simulate_recourse(
    layout: &DecisionLayout,
    policy: &DispatchPolicy,
    samples: &DeviationSamples,
) -> Result<Realized, ValidateError> {
    let rec = Recourse::new(layout, policy)?;
    let pos = rec.positions(samples)?;
    let ng = policy.pg.len();
    let nb = policy.pf.len();
    let nl = layout.network.lines.len();
    let np = pos.len();
    let mut out = Realized {
        count: samples.count,
        periods: samples.periods.clone().collect(),
        num_generators: ng,
        num_bids: nb,
        num_lines: nl,
        pg: Vec::with_capacity(samples.count * np * ng),
        pf: Vec::with_capacity(samples.count * np * nb),
        energy: Vec::with_capacity(samples.count * np * nb),
        flows: Vec::with_capacity(samples.count * np * nl),
    };
    let mut v = PeriodValues::default();
    for s in 0..samples.count {
        let mut energy = vec![0.0; nb];
        for (t, &k) in samples.periods.clone().zip(&pos) {
            rec.step(k, samples.get(s, t), &mut energy, &mut v);
            out.pg.extend_from_slice(&v.pg);
            out.pf.extend_from_slice(&v.pf);
            out.energy.extend_from_slice(&v.energy);
            out.flows.extend_from_slice(&v.flows);
        }
    }
    Ok(out)
}

/// Which periods to tally.
#[derive(Debug, Clone, PartialEq)]
pub enum PeriodSelection {
    /// The period with the largest total base load.
    Peak,
    All,
    /// 0-based periods.
    Only(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub families: Vec<Family>,
    pub samples: usize,
    pub seed: u64,
    pub periods: PeriodSelection,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            families: Family::ALL.to_vec(),
            samples: 100_000,
            seed: 2019,
            periods: PeriodSelection::Peak,
        }
    }
}

/// Empirical violation count of one constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationRecord {
    pub family: Family,
    pub class: ConstraintClass,
    /// 1-based generator or line number, or the aggregator bus.
    pub unit: usize,
    /// 0-based period.
    pub period: usize,
    /// `None` counts a violation of either limit.
    pub side: Option<Side>,
    pub violations: u64,
    pub samples: u64,
}

impl ViolationRecord {
    pub fn probability(&self) -> f64 {
        self.violations as f64 / self.samples as f64
    }

    /// Binomial standard error `√(p(1−p)/n)`.
    pub fn stderr(&self) -> f64 {
        let p = self.probability();
        (p * (1.0 - p) / self.samples as f64).sqrt()
    }

    /// Label used in the report: the class name, suffixed with `:max` or
    /// `:min` for one-sided counts.
    pub fn class_label(&self) -> String {
        match self.side {
            None => self.class.as_str().to_string(),
            Some(Side::Upper) => format!("{}:max", self.class.as_str()),
            Some(Side::Lower) => format!("{}:min", self.class.as_str()),
        }
    }
}

/// How line rows are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    /// Worst unit per family, class and period.
    Max,
    /// Every unit and side.
    PerLine,
}

impl std::str::FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Aggregate::Max),
            "per-line" => Ok(Aggregate::PerLine),
            other => Err(format!("unknown aggregation `{other}` (expected max or per-line)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    pub samples: usize,
    pub seed: u64,
    /// 0-based peak-load period of the case.
    pub peak_period: usize,
    pub periods: Vec<usize>,
    pub records: Vec<ViolationRecord>,
}

impl ViolationReport {
    /// Two-sided record of one unit.
    pub fn get(&self, family: Family, class: ConstraintClass, unit: usize, period: usize) -> Option<&ViolationRecord> {
        self.get_side(family, class, unit, period, None)
    }

    pub fn get_side(
        &self,
        family: Family,
        class: ConstraintClass,
        unit: usize,
        period: usize,
        side: Option<Side>,
    ) -> Option<&ViolationRecord> {
        self.records
            .iter()
            .find(|r| r.family == family && r.class == class && r.unit == unit && r.period == period && r.side == side)
    }

    /// Largest two-sided probability in a class at `period`.
    pub fn worst(&self, family: Family, class: ConstraintClass, period: usize) -> Option<&ViolationRecord> {
        self.records
            .iter()
            .filter(|r| r.family == family && r.class == class && r.period == period && r.side.is_none())
            .max_by(|a, b| a.violations.cmp(&b.violations).then(b.unit.cmp(&a.unit)))
    }

    /// Rows for the CSV report.
    pub fn rows(&self, aggregate: Aggregate) -> Vec<&ViolationRecord> {
        match aggregate {
            Aggregate::PerLine => self.records.iter().collect(),
            Aggregate::Max => {
                let mut out = Vec::new();
                let mut seen = Vec::new();
                for r in self.records.iter().filter(|r| r.side.is_none()) {
                    let key = (r.family, r.class, r.period);
                    if !seen.contains(&key) {
                        seen.push(key);
                        out.extend(self.worst(r.family, r.class, r.period));
                    }
                }
                out
            }
        }
    }

    /// Columns: `distribution,constraint_class,line_or_unit,period,
    /// violations,samples,probability,stderr`, periods 1-based.
    pub fn write_csv<W: Write>(&self, aggregate: Aggregate, out: W) -> Result<(), ValidateError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "distribution",
            "constraint_class",
            "line_or_unit",
            "period",
            "violations",
            "samples",
            "probability",
            "stderr",
        ])?;
        for r in self.rows(aggregate) {
            w.write_record([
                r.family.to_string(),
                r.class_label(),
                r.unit.to_string(),
                (r.period + 1).to_string(),
                r.violations.to_string(),
                r.samples.to_string(),
                format!("{:.6}", r.probability()),
                format!("{:.6}", r.stderr()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Counter layout for one period: per generator, bid (power, energy) and
/// line, three slots each (either side, upper, lower).
struct Tally {
    ng: usize,
    nb: usize,
    nl: usize,
}

impl Tally {
    fn width(&self) -> usize {
        3 * (self.ng + 2 * self.nb + self.nl)
    }

    fn count(&self, v: &PeriodValues, limits: &Limits, active: &[bool], acc: &mut [u64]) {
        let mut mark = |slot: usize, over: bool, under: bool| {
            if over || under {
                acc[3 * slot] += 1;
            }
            if over {
                acc[3 * slot + 1] += 1;
            }
            if under {
                acc[3 * slot + 2] += 1;
            }
        };
        for g in 0..self.ng {
            mark(g, v.pg[g] > limits.pg_max[g] + VIOLATION_TOL, v.pg[g] < limits.pg_min[g] - VIOLATION_TOL);
        }
        for i in 0..self.nb {
            if !active[i] {
                continue;
            }
            let (r_lo, r_hi, e_lo, e_hi) = limits.vb[i];
            mark(self.ng + i, v.pf[i] > r_hi + VIOLATION_TOL, v.pf[i] < r_lo - VIOLATION_TOL);
            mark(
                self.ng + self.nb + i,
                v.energy[i] > e_hi + VIOLATION_TOL,
                v.energy[i] < e_lo - VIOLATION_TOL,
            );
        }
        for l in 0..self.nl {
            let f = v.flows[l];
            mark(
                self.ng + 2 * self.nb + l,
                f > limits.flow[l] + VIOLATION_TOL,
                f < -limits.flow[l] - VIOLATION_TOL,
            );
        }
    }
}

struct Limits {
    pg_min: Vec<f64>,
    pg_max: Vec<f64>,
    /// `(α^{R−}, α^{R+}, α^{E−}, α^{E+})`
    vb: Vec<(f64, f64, f64, f64)>,
    flow: Vec<f64>,
}

/// Samples each family, replays the recourse policy and counts violations of
/// every generator, line, aggregator power and state-of-charge limit in the
/// selected periods.
///
/// Family `f` (position in [`Family::ALL`]) draws with master seed
/// `worker_seed(seed, 1 + f)`; results do not depend on the thread count.
pub fn violation_probabilities(
    layout: &DecisionLayout,
    policy: &DispatchPolicy,
    options: &ValidationOptions,
) -> Result<ViolationReport, ValidateError> {
    if options.samples == 0 {
        return Err(crate::StochasticError::EmptySample.into());
    }
    let rec = Recourse::new(layout, policy)?;
    let net = &layout.network;
    let first = layout.periods[0];
    let selected: Vec<usize> = match &options.periods {
        PeriodSelection::Peak => vec![net.peak_period()],
        PeriodSelection::All => layout.periods.clone(),
        PeriodSelection::Only(v) => v.clone(),
    };
    let mut selected = selected;
    selected.sort_unstable();
    selected.dedup();
    if let Some(&t) = selected.iter().find(|t| !layout.periods.contains(t)) {
        return Err(ValidateError::Shape(format!("period {} is not part of the dispatch", t + 1)));
    }
    let last = *selected.last().ok_or_else(|| ValidateError::Shape("no periods selected".into()))?;
    let range = first..last + 1;

    let tally = Tally {
        ng: net.generators.len(),
        nb: layout.bids.len(),
        nl: net.lines.len(),
    };
    let limits = Limits {
        pg_min: (0..tally.ng).map(|g| net.p_min(g)).collect(),
        pg_max: (0..tally.ng).map(|g| net.p_max(g)).collect(),
        vb: policy
            .acceptance
            .iter()
            .map(|a| (a.alpha_r_minus, a.alpha_r_plus, a.alpha_e_minus, a.alpha_e_plus))
            .collect(),
        flow: (0..tally.nl).map(|l| net.flow_limit(l)).collect(),
    };
    let width = tally.width();
    let active: Vec<Vec<bool>> = selected
        .iter()
        .map(|&t| layout.bids.iter().map(|b| b.active(t)).collect())
        .collect();

    let mut records = Vec::new();
    for &family in &options.families {
        let ordinal = Family::ALL.iter().position(|f| *f == family).unwrap_or(0) as u64;
        let sampler = DeviationSampler::new(family, &layout.wind, worker_seed(options.seed, 1 + ordinal));
        let samples = sample_deviations(&sampler, options.samples, range.clone())?;
        let pos = rec.positions(&samples)?;
        let n_chunks = options.samples.div_ceil(SAMPLE_CHUNK);
        let counts = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0u64; width * selected.len()];
                let mut v = PeriodValues::default();
                let end = ((c + 1) * SAMPLE_CHUNK).min(options.samples);
                for s in c * SAMPLE_CHUNK..end {
                    let mut energy = vec![0.0; tally.nb];
                    let mut next = 0;
                    for (t, &k) in range.clone().zip(&pos) {
                        rec.step(k, samples.get(s, t), &mut energy, &mut v);
                        if selected[next] == t {
                            let slot = &mut acc[next * width..(next + 1) * width];
                            tally.count(&v, &limits, &active[next], slot);
                            next += 1;
                        }
                    }
                }
                acc
            })
            .reduce(
                || vec![0u64; width * selected.len()],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );

        for (j, &t) in selected.iter().enumerate() {
            let acc = &counts[j * width..(j + 1) * width];
            let mut push = |class, unit, slot: usize| {
                for (s, side) in [None, Some(Side::Upper), Some(Side::Lower)].into_iter().enumerate() {
                    records.push(ViolationRecord {
                        family,
                        class,
                        unit,
                        period: t,
                        side,
                        violations: acc[3 * slot + s],
                        samples: options.samples as u64,
                    });
                }
            };
            for g in 0..tally.ng {
                push(ConstraintClass::Generator, g + 1, g);
            }
            for (i, bid) in layout.bids.iter().enumerate() {
                if active[j][i] {
                    push(ConstraintClass::VbPower, bid.bus, tally.ng + i);
                    push(ConstraintClass::VbEnergy, bid.bus, tally.ng + tally.nb + i);
                }
            }
            for l in 0..tally.nl {
                push(ConstraintClass::Line, l + 1, tally.ng + 2 * tally.nb + l);
            }
        }
    }
    Ok(ViolationReport {
        samples: options.samples,
        seed: options.seed,
        peak_period: net.peak_period(),
        periods: selected,
        records,
    })
}

/// Sample mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Monte Carlo estimate of the expected generation cost `E[Σ C(P_g)]` over
/// all dispatched periods, in $.
pub fn monte_carlo_generation_cost(
    layout: &DecisionLayout,
    policy: &DispatchPolicy,
    family: Family,
    samples: usize,
    seed: u64,
) -> Result<Estimate, ValidateError> {
    let rec = Recourse::new(layout, policy)?;
    let range = layout.periods[0]..layout.periods[layout.periods.len() - 1] + 1;
    let sampler = DeviationSampler::new(family, &layout.wind, seed);
    let draws = sample_deviations(&sampler, samples, range.clone())?;
    let pos = rec.positions(&draws)?;
    let net = &layout.network;
    let coef: Vec<(f64, f64, f64)> = (0..net.generators.len()).map(|g| net.cost_pu(g)).collect();
    let (sum, sum_sq) = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut v = PeriodValues::default();
            let mut energy = vec![0.0; layout.bids.len()];
            let mut total = 0.0;
            for (t, &k) in range.clone().zip(&pos) {
                rec.step(k, draws.get(s, t), &mut energy, &mut v);
                for (p, &(c2, c1, c0)) in v.pg.iter().zip(&coef) {
                    total += c2 * p * p + c1 * p + c0;
                }
            }
            (total, total * total)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Ok(Estimate {
        mean,
        stderr: (var / n).sqrt(),
    })
}
