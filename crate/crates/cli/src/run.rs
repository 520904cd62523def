use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use flexmarket::case::Case;
use flexmarket::clearing::{build_cedp, build_clearing, extract_solution, ClearingSolution, DecisionLayout, DispatchPolicy};
use flexmarket::grid::{compute_ptdf, PtdfMatrix};
use flexmarket::pricing::{lmp_stats, write_lmp_csv, write_lmp_stats_csv};
use flexmarket::stochastic::Family;
use flexmarket::validate::{violation_probabilities, Aggregate, PeriodSelection, ValidationOptions};
use flexmarket::ClearingError;
use flexmarket_conic::{solve as solve_program, write_program, ConicProgram, SolveStatus, SolverSettings};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::output::{self, Manifest};
use crate::{Mode, ModelArgs, SolveArgs, SweepArgs, ValidateArgs};

/// Parameters of a solve, as recorded in its manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SolveParams {
    model: ModelArgs,
    mode: Mode,
    /// 1-based.
    period: Option<usize>,
    gamma_p: Option<f64>,
    gamma_e: Option<f64>,
}

struct Prepared {
    case: Case,
    ptdf: PtdfMatrix,
}

fn prepare(model: &ModelArgs, gamma_p: Option<f64>, gamma_e: Option<f64>) -> Result<Prepared> {
    let mut case = Case::load(&model.case)?.with_rewards(gamma_p, gamma_e);
    if model.no_bids {
        case.bids.clear();
        case.risk = case.risk.without_bids();
    }
    if model.deterministic {
        case.wind = case.wind.without_uncertainty();
    }
    let r = &mut case.risk;
    for (over, v) in [
        (model.eps_gen, &mut r.eps_gen),
        (model.eps_line, &mut r.eps_line),
        (model.eps_power, &mut r.eps_power),
        (model.eps_energy, &mut r.eps_energy),
    ] {
        if let Some(e) = over {
            v.iter_mut().for_each(|x| *x = e);
        }
    }
    let ptdf = compute_ptdf(&case.network, case.network.slack_bus)?;
    Ok(Prepared { case, ptdf })
}

fn build(p: &Prepared, mode: Mode, period: Option<usize>) -> Result<(ConicProgram, DecisionLayout)> {
    let c = &p.case;
    let built = match mode {
        Mode::Clearing => build_clearing(&c.network, &p.ptdf, &c.wind, &c.risk, &c.bids, c.network.horizon()),
        Mode::Cedp => {
            let t = match period {
                Some(0) => bail!("periods are 1-based"),
                Some(t) => t - 1,
                None => c.network.peak_period(),
            };
            build_cedp(&c.network, &p.ptdf, &c.wind, &c.risk, t)
        }
    };
    Ok(built?)
}

enum Outcome {
    Solved(Box<ClearingSolution>),
    Failed(SolveStatus),
}

fn solve_built(prog: &ConicProgram, layout: &DecisionLayout) -> Result<Outcome> {
    let sol = solve_program(prog, &SolverSettings::default())?;
    match extract_solution(prog, layout, &sol) {
        Ok(s) => Ok(Outcome::Solved(Box::new(s))),
        Err(ClearingError::NotOptimal(status)) => Ok(Outcome::Failed(status)),
        Err(e) => Err(e.into()),
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn solve(a: &SolveArgs) -> Result<bool> {
    let params = SolveParams {
        model: a.model.clone(),
        mode: a.mode,
        period: a.period,
        gamma_p: a.gamma_p,
        gamma_e: a.gamma_e,
    };
    let p = prepare(&a.model, a.gamma_p, a.gamma_e)?;
    let (prog, layout) = build(&p, a.mode, a.period)?;
    let dir = &a.out.out;
    prepare_dir(dir)?;
    Manifest::new("solve", &a.model.case, &params, None)?.write(dir)?;
    if a.dump {
        write_program(&prog, output::create(&dir.join("program.txt"))?)?;
    }

    let mut summary = String::new();
    writeln!(summary, "case: {}", p.case.name)?;
    writeln!(summary, "mode: {}", if a.mode == Mode::Clearing { "clearing" } else { "cedp" })?;
    let ok = match solve_built(&prog, &layout)? {
        Outcome::Failed(status) => {
            writeln!(summary, "status: {status}")?;
            false
        }
        Outcome::Solved(sol) => {
            writeln!(summary, "status: {}", sol.diagnostics.status)?;
            writeln!(summary, "iterations: {}", sol.diagnostics.iterations)?;
            writeln!(summary, "objective: {:.6}", sol.objective)?;
            writeln!(summary, "expected generation cost: {:.6}", sol.expected_generation_cost)?;
            writeln!(summary, "reward payment: {:.6}", sol.reward_payment)?;
            for (bid, acc) in layout.bids.iter().zip(&sol.acceptance) {
                writeln!(
                    summary,
                    "bus {}: alpha_r = [{}, {}], alpha_e = [{}, {}]",
                    bid.bus,
                    output::f6(acc.alpha_r_minus),
                    output::f6(acc.alpha_r_plus),
                    output::f6(acc.alpha_e_minus),
                    output::f6(acc.alpha_e_plus)
                )?;
            }
            output::write_setpoints(&dir.join("setpoints.csv"), &layout, &sol)?;
            output::write_acceptance(&dir.join("acceptance.csv"), &layout, &sol)?;
            output::write_chance(&dir.join("chance.csv"), &sol)?;
            write_lmp_csv(&sol.lmp, output::create(&dir.join("lmp.csv"))?)?;
            let buses: Vec<usize> = (1..=layout.network.num_buses()).collect();
            write_lmp_stats_csv(&lmp_stats(&sol.lmp, &buses)?, output::create(&dir.join("lmp_stats.csv"))?)?;
            output::write_json(&dir.join("policy.json"), &sol.policy())?;
            true
        }
    };
    std::fs::write(dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(ok)
}

/// `start:end:count` (inclusive, evenly spaced) or `a,b,c`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let grid = if parts.len() == 3 {
        let a: f64 = parts[0].trim().parse().context("grid start")?;
        let b: f64 = parts[1].trim().parse().context("grid end")?;
        let n: usize = parts[2].trim().parse().context("grid count")?;
        match n {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        }
    } else {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("grid value `{v}`")))
            .collect::<Result<_>>()?
    };
    if grid.is_empty() {
        bail!("grid `{s}` is empty");
    }
    Ok(grid)
}

struct SweepPoint {
    gamma_p: f64,
    gamma_e: f64,
    status: String,
    objective: Option<f64>,
    /// Per bid `(|α^{R+}|, |α^{E−}|)`.
    alpha: Vec<(f64, f64)>,
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        b = b.num_threads(j);
    }
    Ok(b.build()?)
}

pub fn sweep(a: &SweepArgs) -> Result<bool> {
    let gp = parse_grid(&a.gamma_p)?;
    let ge = parse_grid(&a.gamma_e)?;
    if a.model.no_bids {
        bail!("a reward sweep needs bids");
    }
    let base = prepare(&a.model, None, None)?;
    if base.case.bids.is_empty() {
        bail!("case {} has no bids to sweep", base.case.name);
    }
    let buses: Vec<usize> = base.case.bids.iter().map(|b| b.bus).collect();
    let grid: Vec<(f64, f64)> = gp.iter().flat_map(|&p| ge.iter().map(move |&e| (p, e))).collect();
    let points: Vec<SweepPoint> = pool(a.jobs)?.install(|| {
        grid.par_iter()
            .map(|&(p, e)| {
                let prepared = Prepared {
                    case: base.case.with_rewards(Some(p), Some(e)),
                    ptdf: base.ptdf.clone(),
                };
                let result = build(&prepared, Mode::Clearing, None).and_then(|(prog, layout)| solve_built(&prog, &layout));
                let (status, objective, alpha) = match result {
                    Ok(Outcome::Solved(s)) => (
                        "optimal".to_string(),
                        Some(s.objective),
                        s.acceptance.iter().map(|x| (x.alpha_r_plus.abs(), x.alpha_e_minus.abs())).collect(),
                    ),
                    Ok(Outcome::Failed(st)) => (st.to_string(), None, Vec::new()),
                    Err(err) => (format!("error: {err}"), None, Vec::new()),
                };
                SweepPoint {
                    gamma_p: p,
                    gamma_e: e,
                    status,
                    objective,
                    alpha,
                }
            })
            .collect()
    });

    let dir = &a.out.out;
    prepare_dir(dir)?;
    let params = serde_json::json!({ "model": a.model, "gamma_p": gp, "gamma_e": ge, "jobs": a.jobs });
    Manifest::new("sweep", &a.model.case, params, None)?.write(dir)?;

    let mut w = csv::Writer::from_writer(output::create(&dir.join("sweep.csv"))?);
    w.write_record(["gamma_p", "gamma_e", "bus", "status", "objective", "alpha_r_plus_abs", "alpha_e_minus_abs"])?;
    for pt in &points {
        for (i, bus) in buses.iter().enumerate() {
            let (r, e) = pt
                .alpha
                .get(i)
                .map_or((String::new(), String::new()), |(r, e)| (output::f6(*r), output::f6(*e)));
            w.write_record([
                pt.gamma_p.to_string(),
                pt.gamma_e.to_string(),
                bus.to_string(),
                pt.status.clone(),
                pt.objective.map_or(String::new(), |o| format!("{o:.6}")),
                r,
                e,
            ])?;
        }
    }
    w.flush()?;

    let report = monotonicity(&points, &buses, gp.len(), ge.len());
    let mut w = csv::Writer::from_writer(output::create(&dir.join("monotonicity.csv"))?);
    w.write_record(["check", "bus", "holds", "worst_violation"])?;
    for (check, bus, worst) in &report {
        w.write_record([check.to_string(), bus.to_string(), (*worst <= 1e-6).to_string(), format!("{worst:.3e}")])?;
    }
    w.flush()?;

    let solved = points.iter().filter(|p| p.objective.is_some()).count();
    println!("sweep: {solved}/{} grid points optimal", points.len());
    for (check, bus, worst) in &report {
        println!("{check} bus {bus}: {}", if *worst <= 1e-6 { "holds" } else { "fails" });
    }
    Ok(solved == points.len())
}

/// For each bus: the largest increase of cleared energy and power along
/// either reward axis, and the largest shortfall of its energy below the
/// best other bus. Points that failed to solve are skipped.
fn monotonicity(points: &[SweepPoint], buses: &[usize], np: usize, ne: usize) -> Vec<(&'static str, usize, f64)> {
    let at = |i: usize, j: usize| &points[i * ne + j];
    let mut out = Vec::new();
    for (b, &bus) in buses.iter().enumerate() {
        let mut worst = [0.0_f64; 4];
        for i in 0..np {
            for j in 0..ne {
                let Some(&(r0, e0)) = at(i, j).alpha.get(b) else { continue };
                if i + 1 < np {
                    if let Some(&(r1, e1)) = at(i + 1, j).alpha.get(b) {
                        worst[0] = worst[0].max(e1 - e0);
                        worst[2] = worst[2].max(r1 - r0);
                    }
                }
                if j + 1 < ne {
                    if let Some(&(r1, e1)) = at(i, j + 1).alpha.get(b) {
                        worst[1] = worst[1].max(e1 - e0);
                        worst[3] = worst[3].max(r1 - r0);
                    }
                }
            }
        }
        let dominance = points
            .iter()
            .filter(|p| p.alpha.len() == buses.len())
            .map(|p| {
                let mine = p.alpha[b].1;
                p.alpha.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max) - mine
            })
            .fold(0.0_f64, f64::max);
        out.push(("energy_nonincreasing_in_gamma_p", bus, worst[0]));
        out.push(("energy_nonincreasing_in_gamma_e", bus, worst[1]));
        out.push(("power_nonincreasing_in_gamma_p", bus, worst[2]));
        out.push(("power_nonincreasing_in_gamma_e", bus, worst[3]));
        out.push(("largest_energy_everywhere", bus, dominance));
    }
    out
}

fn parse_periods(s: &str) -> Result<PeriodSelection> {
    Ok(match s {
        "peak" => PeriodSelection::Peak,
        "all" => PeriodSelection::All,
        list => PeriodSelection::Only(
            list.split(',')
                .map(|v| match v.trim().parse::<usize>() {
                    Ok(t) if t >= 1 => Ok(t - 1),
                    _ => bail!("period `{v}` is not a 1-based integer"),
                })
                .collect::<Result<_>>()?,
        ),
    })
}

pub fn validate(a: &ValidateArgs) -> Result<bool> {
    let manifest = Manifest::read(&a.solution)?;
    if manifest.command != "solve" {
        bail!("{} was not written by `solve`", a.solution.display());
    }
    let mut params: SolveParams = serde_json::from_value(manifest.parameters).context("solution manifest parameters")?;
    if let Some(c) = &a.case {
        params.model.case = c.clone();
    }
    let policy_path = a.solution.join("policy.json");
    let text = std::fs::read_to_string(&policy_path)
        .with_context(|| format!("no solved dispatch at {}", policy_path.display()))?;
    let policy: DispatchPolicy = serde_json::from_str(&text).with_context(|| format!("parsing {}", policy_path.display()))?;

    let families = a
        .families
        .split(',')
        .map(|f| f.trim().parse::<Family>().map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let aggregate: Aggregate = a.aggregate.parse().map_err(anyhow::Error::msg)?;
    let options = ValidationOptions {
        families,
        samples: a.samples,
        seed: a.seed,
        periods: parse_periods(&a.periods)?,
    };

    let p = prepare(&params.model, params.gamma_p, params.gamma_e)?;
    let (_, layout) = build(&p, params.mode, params.period)?;
    let report = pool(a.jobs)?.install(|| violation_probabilities(&layout, &policy, &options))?;

    let dir = &a.out.out;
    prepare_dir(dir)?;
    let vparams = serde_json::json!({
        "solution": a.solution,
        "case": params.model.case,
        "families": a.families,
        "samples": a.samples,
        "periods": a.periods,
        "aggregate": a.aggregate,
        "weibull": Family::Weibull.construction(),
    });
    Manifest::new("validate", &params.model.case, vparams, Some(a.seed))?.write(dir)?;
    report.write_csv(aggregate, output::create(&dir.join("violations.csv"))?)?;

    println!("peak period: {}", report.peak_period + 1);
    for f in &options.families {
        for &t in &report.periods {
            if let Some(r) = report.worst(*f, flexmarket::clearing::ConstraintClass::Line, t) {
                println!(
                    "{f} period {}: worst line {} violation {:.4} (stderr {:.4})",
                    t + 1,
                    r.unit,
                    r.probability(),
                    r.stderr()
                );
            }
        }
    }
    Ok(true)
}
