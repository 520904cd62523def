//! Primal-dual interior-point method for quadratic cone programs.
//!
//! Standard form after compilation:
//!
//! ```text
//! minimize    ½xᵀPx + qᵀx
//! subject to  Ax = b
//!             Gx + s = h,   s ∈ K = ℝ₊ᵐ¹ × Q^{m₂} × …
//! ```
//!
//! Infeasible-start Mehrotra predictor-corrector with Nesterov–Todd scaling.
//! The Newton system is reduced to `[P + GᵀW⁻²G, Aᵀ; A, 0]`, which is
//! assembled densely (each cone block only touches the columns it uses) and
//! factored by LU with a small static regularization and iterative
//! refinement.

use nalgebra::{DMatrix, DVector};

use crate::cone::{self, Scaling};
use crate::program::{ConeKind, ConicProgram};
use crate::solution::{ConicSolution, IterationLog, Residuals, SolveStatus};
use crate::SolveError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative tolerance on primal residual, dual residual and gap.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

const STEP_FRACTION: f64 = 0.99;
const KKT_REG: f64 = 1e-12;
const REFINE_STEPS: usize = 4;

struct Block {
    kind: ConeKind,
    offset: usize,
    dim: usize,
    cols: Vec<usize>,
    /// Rows of `G` restricted to `cols` (dim × cols.len()).
    g: DMatrix<f64>,
}

impl Block {
    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim
    }
}

/// Program compiled to standard form with row and objective equilibration.
struct Compiled {
    n: usize,
    m: usize,
    pdiag: Vec<f64>,
    q: Vec<f64>,
    obj_const: f64,
    a: DMatrix<f64>,
    b: Vec<f64>,
    blocks: Vec<Block>,
    h: Vec<f64>,
    degree: usize,
    obj_scale: f64,
    eq_scale: Vec<f64>,
    blk_scale: Vec<f64>,
    // Norms of the unscaled data used for relative residuals.
    norm_q: f64,
    norm_b: f64,
    norm_h: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Compiled {
    fn new(prog: &ConicProgram) -> Self {
        let n = prog.num_vars();
        let pdiag0: Vec<f64> = prog.quadratic_costs().iter().map(|q| 2.0 * q).collect();
        let q0 = prog.linear_costs().to_vec();
        let obj_scale = 1.0 / inf_norm(&pdiag0).max(inf_norm(&q0)).max(1.0);

        let eqs = prog.equalities();
        let p = eqs.len();
        let mut a = DMatrix::zeros(p, n);
        let mut b = vec![0.0; p];
        let mut eq_scale = vec![1.0; p];
        let mut b0 = vec![0.0; p];
        for (i, e) in eqs.iter().enumerate() {
            let rn = e.lhs().terms().fold(0.0_f64, |acc, (_, c)| acc.max(c.abs()));
            let d = if rn > 0.0 { 1.0 / rn } else { 1.0 };
            eq_scale[i] = d;
            for (v, c) in e.lhs().terms() {
                a[(i, v.index())] += d * c;
            }
            b[i] = d * e.rhs();
            b0[i] = e.rhs();
        }

        let mut blocks = Vec::with_capacity(prog.cones().len());
        let mut h = Vec::new();
        let mut h0 = Vec::new();
        let mut blk_scale = Vec::with_capacity(prog.cones().len());
        let mut degree = 0;
        for c in prog.cones() {
            let mut cols: Vec<usize> = c
                .rows()
                .iter()
                .flat_map(|r| r.terms().map(|(v, _)| v.index()))
                .collect();
            cols.sort_unstable();
            cols.dedup();
            let rn = c
                .rows()
                .iter()
                .flat_map(|r| r.terms().map(|(_, a)| a.abs()))
                .fold(0.0_f64, f64::max);
            let d = if rn > 0.0 { 1.0 / rn } else { 1.0 };
            let mut g = DMatrix::zeros(c.dim(), cols.len());
            for (i, r) in c.rows().iter().enumerate() {
                for (v, coef) in r.terms() {
                    let k = cols.binary_search(&v.index()).expect("column present");
                    // s = expr = aᵀx + c  ⇒  G = −a, h = c
                    g[(i, k)] -= d * coef;
                }
                h.push(d * r.constant_part());
                h0.push(r.constant_part());
            }
            degree += cone::degree(c.kind(), c.dim());
            blocks.push(Block {
                kind: c.kind(),
                offset: h.len() - c.dim(),
                dim: c.dim(),
                cols,
                g,
            });
            blk_scale.push(d);
        }

        Compiled {
            n,
            m: h.len(),
            pdiag: pdiag0.iter().map(|v| v * obj_scale).collect(),
            q: q0.iter().map(|v| v * obj_scale).collect(),
            obj_const: prog.objective_constant(),
            a,
            b,
            blocks,
            h,
            degree,
            obj_scale,
            eq_scale,
            blk_scale,
            norm_q: inf_norm(&q0),
            norm_b: inf_norm(&b0),
            norm_h: inf_norm(&h0),
        }
    }

    fn g_mul(&self, x: &[f64], out: &mut [f64]) {
        for blk in &self.blocks {
            for i in 0..blk.dim {
                let mut acc = 0.0;
                for (k, &j) in blk.cols.iter().enumerate() {
                    acc += blk.g[(i, k)] * x[j];
                }
                out[blk.offset + i] = acc;
            }
        }
    }

    fn gt_mul_add(&self, z: &[f64], out: &mut [f64]) {
        for blk in &self.blocks {
            for (k, &j) in blk.cols.iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..blk.dim {
                    acc += blk.g[(i, k)] * z[blk.offset + i];
                }
                out[j] += acc;
            }
        }
    }

    fn a_mul(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        (&self.a * xv).as_slice().to_vec()
    }

    fn at_mul_add(&self, y: &[f64], out: &mut [f64]) {
        let yv = DVector::from_column_slice(y);
        let r = self.a.tr_mul(&yv);
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }

    fn for_each_block<F: FnMut(&Block, &mut [f64])>(&self, v: &mut [f64], mut f: F) {
        for blk in &self.blocks {
            f(blk, &mut v[blk.range()]);
        }
    }
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    k0: DMatrix<f64>,
}

struct Workspace<'a> {
    cp: &'a Compiled,
    scalings: Vec<Scaling>,
}

impl<'a> Workspace<'a> {
    fn apply_w(&self, v: &[f64], out: &mut [f64]) {
        for (blk, w) in self.cp.blocks.iter().zip(&self.scalings) {
            w.apply(&v[blk.range()], &mut out[blk.range()]);
        }
    }

    fn apply_winv(&self, v: &[f64], out: &mut [f64]) {
        for (blk, w) in self.cp.blocks.iter().zip(&self.scalings) {
            w.apply_inv(&v[blk.range()], &mut out[blk.range()]);
        }
    }

    fn factor(&self) -> Option<Kkt> {
        let cp = self.cp;
        let n = cp.n;
        let p = cp.a.nrows();
        let mut hmat = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            hmat[(j, j)] = cp.pdiag[j];
        }
        let mut col = vec![0.0; 0];
        let mut wcol = vec![0.0; 0];
        for (blk, w) in cp.blocks.iter().zip(&self.scalings) {
            let nc = blk.cols.len();
            let mut scaled = DMatrix::<f64>::zeros(blk.dim, nc);
            col.resize(blk.dim, 0.0);
            wcol.resize(blk.dim, 0.0);
            for k in 0..nc {
                for i in 0..blk.dim {
                    col[i] = blk.g[(i, k)];
                }
                w.apply_inv(&col, &mut wcol);
                for i in 0..blk.dim {
                    scaled[(i, k)] = wcol[i];
                }
            }
            let contrib = scaled.tr_mul(&scaled);
            for (a, &ja) in blk.cols.iter().enumerate() {
                for (b, &jb) in blk.cols.iter().enumerate() {
                    hmat[(ja, jb)] += contrib[(a, b)];
                }
            }
        }
        let mut k0 = DMatrix::<f64>::zeros(n + p, n + p);
        k0.view_mut((0, 0), (n, n)).copy_from(&hmat);
        k0.view_mut((n, 0), (p, n)).copy_from(&cp.a);
        k0.view_mut((0, n), (n, p)).copy_from(&cp.a.transpose());
        let reg = KKT_REG;
        let mut kreg = k0.clone();
        for j in 0..n {
            kreg[(j, j)] += reg;
        }
        for i in 0..p {
            kreg[(n + i, n + i)] -= reg;
        }
        let lu = kreg.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Kkt { lu, k0 })
    }

    /// Solves
    /// `[P Aᵀ Gᵀ; A 0 0; G 0 −W²]·(dx, dy, dz) = (bx, by, bz)`
    /// with iterative refinement on the unreduced system.
    fn solve(&self, kkt: &Kkt, bx: &[f64], by: &[f64], bz: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let cp = self.cp;
        let (mut dx, mut dy, mut dz) = self.solve_reduced(kkt, bx, by, bz)?;
        let scale = 1.0 + inf_norm(bx).max(inf_norm(by)).max(inf_norm(bz));
        let mut t1 = vec![0.0; cp.m];
        let mut t2 = vec![0.0; cp.m];
        let mut prev = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let mut r1: Vec<f64> = (0..cp.n).map(|j| bx[j] - cp.pdiag[j] * dx[j]).collect();
            let mut tmp = vec![0.0; cp.n];
            cp.at_mul_add(&dy, &mut tmp);
            cp.gt_mul_add(&dz, &mut tmp);
            for j in 0..cp.n {
                r1[j] -= tmp[j];
            }
            let adx = cp.a_mul(&dx);
            let r2: Vec<f64> = by.iter().zip(&adx).map(|(b, a)| b - a).collect();
            cp.g_mul(&dx, &mut t1);
            self.apply_w(&dz, &mut t2);
            let mut w2dz = vec![0.0; cp.m];
            self.apply_w(&t2, &mut w2dz);
            let r3: Vec<f64> = (0..cp.m).map(|i| bz[i] - (t1[i] - w2dz[i])).collect();
            let err = inf_norm(&r1).max(inf_norm(&r2)).max(inf_norm(&r3));
            if err <= 1e-14 * scale || err >= 0.5 * prev {
                break;
            }
            prev = err;
            let (cx, cy, cz) = self.solve_reduced(kkt, &r1, &r2, &r3)?;
            for j in 0..cp.n {
                dx[j] += cx[j];
            }
            for i in 0..dy.len() {
                dy[i] += cy[i];
            }
            for i in 0..cp.m {
                dz[i] += cz[i];
            }
        }
        Some((dx, dy, dz))
    }

    fn solve_reduced(&self, kkt: &Kkt, bx: &[f64], by: &[f64], bz: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let cp = self.cp;
        let n = cp.n;
        let p = by.len();
        let mut t1 = vec![0.0; cp.m];
        let mut t2 = vec![0.0; cp.m];
        self.apply_winv(bz, &mut t1);
        self.apply_winv(&t1, &mut t2);
        let mut r1 = bx.to_vec();
        cp.gt_mul_add(&t2, &mut r1);
        let mut rhs = DVector::zeros(n + p);
        rhs.as_mut_slice()[..n].copy_from_slice(&r1);
        rhs.as_mut_slice()[n..].copy_from_slice(by);
        let mut sol = kkt.lu.solve(&rhs)?;
        for _ in 0..REFINE_STEPS {
            let res = &rhs - &kkt.k0 * &sol;
            if inf_norm(res.as_slice()) <= 1e-15 * (1.0 + inf_norm(rhs.as_slice())) {
                break;
            }
            let corr = kkt.lu.solve(&res)?;
            sol += corr;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dx = sol.as_slice()[..n].to_vec();
        let dy = sol.as_slice()[n..].to_vec();
        let mut gdx = vec![0.0; cp.m];
        cp.g_mul(&dx, &mut gdx);
        for i in 0..cp.m {
            gdx[i] -= bz[i];
        }
        self.apply_winv(&gdx, &mut t1);
        self.apply_winv(&t1, &mut t2);
        Some((dx, dy, t2))
    }
}

fn max_step(cp: &Compiled, s: &[f64], ds: &[f64], z: &[f64], dz: &[f64]) -> f64 {
    let mut a = f64::INFINITY;
    for blk in &cp.blocks {
        let r = blk.range();
        a = a.min(cone::max_step(blk.kind, &s[r.clone()], &ds[r.clone()]));
        a = a.min(cone::max_step(blk.kind, &z[r.clone()], &dz[r]));
    }
    a
}

/// Shifts `v` into the interior if its smallest eigenvalue is not
/// comfortably positive.
fn push_interior(cp: &Compiled, v: &mut [f64]) {
    let mut t = f64::NEG_INFINITY;
    for blk in &cp.blocks {
        t = t.max(-cone::min_eig(blk.kind, &v[blk.range()]));
    }
    let nrm = inf_norm(v);
    if cp.m > 0 && t >= -1e-8 * nrm.max(1.0) {
        let shift = 1.0 + t;
        let mut e = vec![0.0; cp.m];
        cp.for_each_block(&mut e, |blk, out| cone::set_identity(blk.kind, out));
        for i in 0..cp.m {
            v[i] += shift * e[i];
        }
    }
}

struct Metrics {
    res: Residuals,
    pobj: f64,
    dobj: f64,
    rx: Vec<f64>,
    ry: Vec<f64>,
    rz: Vec<f64>,
}

fn metrics(cp: &Compiled, it: &Iterate) -> Metrics {
    let n = cp.n;
    let mut rx: Vec<f64> = (0..n).map(|j| cp.pdiag[j] * it.x[j] + cp.q[j]).collect();
    cp.at_mul_add(&it.y, &mut rx);
    cp.gt_mul_add(&it.z, &mut rx);
    let ax = cp.a_mul(&it.x);
    let ry: Vec<f64> = ax.iter().zip(&cp.b).map(|(a, b)| a - b).collect();
    let mut rz = vec![0.0; cp.m];
    cp.g_mul(&it.x, &mut rz);
    for i in 0..cp.m {
        rz[i] += it.s[i] - cp.h[i];
    }

    let sigma = cp.obj_scale;
    let quad: f64 = (0..n).map(|j| 0.5 * cp.pdiag[j] * it.x[j] * it.x[j]).sum();
    let pobj_s = quad + dot(&cp.q, &it.x);
    let gap_s = dot(&it.s, &it.z);
    let dobj_s = pobj_s + dot(&it.y, &ry) + dot(&it.z, &rz) - gap_s;
    let pobj = pobj_s / sigma + cp.obj_const;
    let dobj = dobj_s / sigma + cp.obj_const;

    let rx_u = inf_norm(&rx) / sigma;
    let ry_u = ry
        .iter()
        .zip(&cp.eq_scale)
        .fold(0.0_f64, |acc, (r, d)| acc.max((r / d).abs()));
    let mut rz_u = 0.0_f64;
    for (blk, d) in cp.blocks.iter().zip(&cp.blk_scale) {
        for i in blk.range() {
            rz_u = rz_u.max((rz[i] / d).abs());
        }
    }
    let res = Residuals {
        primal: (ry_u / cp.norm_b.max(1.0)).max(rz_u / cp.norm_h.max(1.0)),
        dual: rx_u / cp.norm_q.max(1.0),
        gap: (gap_s / sigma).max(0.0) / pobj.abs().max(1.0),
    };
    Metrics {
        res,
        pobj,
        dobj,
        rx,
        ry,
        rz,
    }
}

fn finish(
    prog: &ConicProgram,
    cp: &Compiled,
    it: &Iterate,
    status: SolveStatus,
    m: &Metrics,
    iterations: usize,
    history: Vec<IterationLog>,
) -> ConicSolution {
    let sigma = cp.obj_scale;
    let eq_duals = it
        .y
        .iter()
        .zip(&cp.eq_scale)
        .map(|(y, d)| -d * y / sigma)
        .collect();
    let mut cone_duals = Vec::with_capacity(cp.blocks.len());
    let mut cone_slacks = Vec::with_capacity(cp.blocks.len());
    for (blk, d) in cp.blocks.iter().zip(&cp.blk_scale) {
        cone_duals.push(it.z[blk.range()].iter().map(|z| d * z / sigma).collect());
        cone_slacks.push(it.s[blk.range()].iter().map(|s| s / d).collect());
    }
    ConicSolution {
        status,
        x: it.x.clone(),
        objective: m.pobj,
        dual_objective: m.dobj,
        residuals: m.res,
        iterations,
        history,
        eq_duals,
        cone_duals,
        cone_slacks,
        handles: prog.handle_map(),
    }
}

/// Solves `program` to relative tolerance `settings.tol`.
///
/// Infeasibility, unboundedness and iteration-limit exhaustion are reported
/// through [`SolveStatus`]; an `Err` is returned only for malformed input.
pub fn solve(prog: &ConicProgram, settings: &SolverSettings) -> Result<ConicSolution, SolveError> {
    prog.validate()?;
    if !(settings.tol > 0.0) || !settings.tol.is_finite() {
        return Err(SolveError::InvalidTolerance(settings.tol));
    }
    let mut sol = solve_inner(prog, settings)?;
    if sol.status == SolveStatus::NumericalFailure {
        if let Some(t) = phase_one(prog, settings) {
            if t > PHASE_ONE_THRESHOLD {
                sol.status = SolveStatus::Infeasible;
            }
        }
    }
    Ok(sol)
}

const PHASE_ONE_THRESHOLD: f64 = 1e-6;
const DIVERGENCE: f64 = 1e12;

/// Smallest uniform relaxation `t` that makes the constraints feasible:
/// `min t` s.t. `|Ax − b| ≤ t`, `slack + t·e ∈ K`, `t ≥ −1`. The relaxed
/// program is always strictly feasible, so a clearly positive optimum proves
/// the original infeasible.
fn phase_one(prog: &ConicProgram, settings: &SolverSettings) -> Option<f64> {
    if prog.equalities().is_empty() && prog.cones().is_empty() {
        return None;
    }
    let mut p1 = ConicProgram::new();
    let xs: Vec<_> = (0..prog.num_vars()).map(|j| p1.add_var(format!("x{j}"))).collect();
    let t = p1.add_var("t");
    let remap = |e: &crate::LinExpr| {
        let mut out = crate::LinExpr::constant(e.constant_part());
        for (v, a) in e.terms() {
            out.push(xs[v.index()], a);
        }
        out
    };
    p1.add_linear_cost(&crate::LinExpr::var(t));
    p1.add_nonneg("floor", crate::LinExpr::var(t) + 1.0).ok()?;
    for (i, e) in prog.equalities().iter().enumerate() {
        let r = remap(e.lhs()) - e.rhs();
        p1.add_nonneg(format!("eu{i}"), crate::LinExpr::var(t) - r.clone()).ok()?;
        p1.add_nonneg(format!("el{i}"), crate::LinExpr::var(t) + r).ok()?;
    }
    for (k, c) in prog.cones().iter().enumerate() {
        match c.kind() {
            ConeKind::NonNeg => {
                for (i, r) in c.rows().iter().enumerate() {
                    p1.add_nonneg(format!("c{k}_{i}"), remap(r) + crate::LinExpr::var(t))
                        .ok()?;
                }
            }
            ConeKind::SecondOrder => {
                let rows = c.rows();
                let head = remap(&rows[0]) + crate::LinExpr::var(t);
                let tail = rows[1..].iter().map(&remap).collect();
                p1.add_soc(format!("c{k}"), head, tail).ok()?;
            }
        }
    }
    let sol = solve_inner(&p1, settings).ok()?;
    (sol.status == SolveStatus::Optimal).then(|| sol.x[t.index()])
}

fn solve_inner(prog: &ConicProgram, settings: &SolverSettings) -> Result<ConicSolution, SolveError> {
    let cp = Compiled::new(prog);
    let n = cp.n;
    let p = cp.b.len();
    let m = cp.m;
    let tol = settings.tol;

    let mut ws = Workspace {
        cp: &cp,
        scalings: cp
            .blocks
            .iter()
            .map(|b| Scaling::identity(b.kind, b.dim))
            .collect(),
    };

    // Starting point from the W = I system.
    let mut it = {
        let kkt = ws.factor().ok_or(SolveError::SingularStart)?;
        let bx: Vec<f64> = cp.q.iter().map(|v| -v).collect();
        let (x, y, z) = ws.solve(&kkt, &bx, &cp.b, &cp.h).ok_or(SolveError::SingularStart)?;
        let mut s: Vec<f64> = z.iter().map(|v| -v).collect();
        let mut z = z;
        push_interior(&cp, &mut s);
        push_interior(&cp, &mut z);
        Iterate { x, y, z, s }
    };

    let mut history = Vec::new();
    let mut best: Option<(f64, Iterate)> = None;
    let mut last_step = 0.0;

    for iter in 0..=settings.max_iter {
        let met = metrics(&cp, &it);
        history.push(IterationLog {
            iter,
            primal_objective: met.pobj,
            dual_objective: met.dobj,
            residuals: met.res,
            step: last_step,
        });

        if met.res.primal <= tol && met.res.dual <= tol && met.res.gap <= tol {
            return Ok(finish(prog, &cp, &it, SolveStatus::Optimal, &met, iter, history));
        }

        // Infeasibility certificates, tested on the equilibrated data.
        let by_hz = dot(&cp.b, &it.y) + dot(&cp.h, &it.z);
        if met.res.primal > tol && by_hz < 0.0 {
            let mut aty_gtz = vec![0.0; n];
            cp.at_mul_add(&it.y, &mut aty_gtz);
            cp.gt_mul_add(&it.z, &mut aty_gtz);
            if inf_norm(&aty_gtz) <= tol * (-by_hz) {
                return Ok(finish(prog, &cp, &it, SolveStatus::Infeasible, &met, iter, history));
            }
        }
        let qx = dot(&cp.q, &it.x);
        if met.res.dual > tol && qx < 0.0 {
            let px: Vec<f64> = (0..n).map(|j| cp.pdiag[j] * it.x[j]).collect();
            let ax = cp.a_mul(&it.x);
            let mut gxs = vec![0.0; m];
            cp.g_mul(&it.x, &mut gxs);
            for i in 0..m {
                gxs[i] += it.s[i];
            }
            let lim = tol * (-qx);
            if inf_norm(&px) <= lim && inf_norm(&ax) <= lim && inf_norm(&gxs) <= lim {
                return Ok(finish(prog, &cp, &it, SolveStatus::Unbounded, &met, iter, history));
            }
        }

        let score = met.res.max();
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((
                score,
                Iterate {
                    x: it.x.clone(),
                    y: it.y.clone(),
                    z: it.z.clone(),
                    s: it.s.clone(),
                },
            ));
        }
        if iter == settings.max_iter
            || inf_norm(&it.z).max(inf_norm(&it.y)).max(inf_norm(&it.x)) > DIVERGENCE
        {
            break;
        }

        // Scaling and λ = W z.
        let mut scalings = Vec::with_capacity(cp.blocks.len());
        let mut ok = true;
        for blk in &cp.blocks {
            match Scaling::compute(blk.kind, &it.s[blk.range()], &it.z[blk.range()]) {
                Some(w) => scalings.push(w),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        ws.scalings = scalings;
        let mut lam = vec![0.0; m];
        ws.apply_w(&it.z, &mut lam);
        let mu = if cp.degree > 0 {
            dot(&it.s, &it.z) / cp.degree as f64
        } else {
            0.0
        };

        let Some(kkt) = ws.factor() else { break };

        let mut lamsq = vec![0.0; m];
        for blk in &cp.blocks {
            let r = blk.range();
            cone::jordan_product(blk.kind, &lam[r.clone()], &lam[r.clone()], &mut lamsq[r]);
        }

        let neg_rx: Vec<f64> = met.rx.iter().map(|v| -v).collect();
        let neg_ry: Vec<f64> = met.ry.iter().map(|v| -v).collect();
        let neg_rz: Vec<f64> = met.rz.iter().map(|v| -v).collect();

        // Solves the Newton system for complementarity right-hand side `cs`
        // (λ ∘ (W dz + W⁻¹ ds) = cs) and returns (dx, dy, dz, ds).
        let newton = |cs: &[f64]| -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
            let mut rhat = vec![0.0; m];
            for blk in &cp.blocks {
                let r = blk.range();
                cone::jordan_div(blk.kind, &lam[r.clone()], &cs[r.clone()], &mut rhat[r]);
            }
            let mut wr = vec![0.0; m];
            ws.apply_w(&rhat, &mut wr);
            let bz: Vec<f64> = (0..m).map(|i| neg_rz[i] - wr[i]).collect();
            let (dx, dy, dz) = ws.solve(&kkt, &neg_rx, &neg_ry, &bz)?;
            // ds = W (r̂ − W dz)
            let mut wdz = vec![0.0; m];
            ws.apply_w(&dz, &mut wdz);
            let diff: Vec<f64> = (0..m).map(|i| rhat[i] - wdz[i]).collect();
            let mut ds = vec![0.0; m];
            ws.apply_w(&diff, &mut ds);
            Some((dx, dy, dz, ds))
        };

        // Predictor.
        let cs_aff: Vec<f64> = lamsq.iter().map(|v| -v).collect();
        let Some((_, _, dz_a, ds_a)) = newton(&cs_aff) else { break };
        let alpha_a = max_step(&cp, &it.s, &ds_a, &it.z, &dz_a).min(1.0);
        let sigma = if cp.degree > 0 && mu > 0.0 {
            let mu_a: f64 = (0..m)
                .map(|i| (it.s[i] + alpha_a * ds_a[i]) * (it.z[i] + alpha_a * dz_a[i]))
                .sum::<f64>()
                / cp.degree as f64;
            (mu_a.max(0.0) / mu).min(1.0).powi(3)
        } else {
            0.0
        };

        // Corrector: cs = −λ∘λ − (W⁻¹ds_a)∘(W dz_a) + σμe.
        let mut wids = vec![0.0; m];
        ws.apply_winv(&ds_a, &mut wids);
        let mut wdz = vec![0.0; m];
        ws.apply_w(&dz_a, &mut wdz);
        let mut cs = vec![0.0; m];
        let mut e = vec![0.0; m];
        for blk in &cp.blocks {
            let r = blk.range();
            cone::jordan_product(blk.kind, &wids[r.clone()], &wdz[r.clone()], &mut cs[r.clone()]);
            cone::set_identity(blk.kind, &mut e[r]);
        }
        let second_order = cs;
        let combined = |with_correction: bool, sig: f64| -> Vec<f64> {
            (0..m)
                .map(|i| {
                    let corr = if with_correction { second_order[i] } else { 0.0 };
                    -lamsq[i] - corr + sig * mu * e[i]
                })
                .collect()
        };
        let mu_after = |alpha: f64, ds: &[f64], dz: &[f64]| -> f64 {
            (0..m)
                .map(|i| (it.s[i] + alpha * ds[i]) * (it.z[i] + alpha * dz[i]))
                .sum::<f64>()
                / cp.degree.max(1) as f64
        };
        let Some((mut dx, mut dy, mut dz, mut ds)) = newton(&combined(true, sigma)) else { break };
        let mut alpha = (STEP_FRACTION * max_step(&cp, &it.s, &ds, &it.z, &dz)).min(1.0);
        // Mehrotra's correction can raise μ when the predictor is poor; fall
        // back to a first-order centering step in that case.
        if cp.degree > 0 && mu_after(alpha, &ds, &dz) > (1.0 - 0.01 * alpha) * mu {
            let sig = sigma.max(0.1);
            let Some(d) = newton(&combined(false, sig)) else { break };
            let a = (STEP_FRACTION * max_step(&cp, &it.s, &d.3, &it.z, &d.2)).min(1.0);
            (dx, dy, dz, ds) = d;
            alpha = a;
        }
        if !(alpha > 1e-14) {
            break;
        }
        for j in 0..n {
            it.x[j] += alpha * dx[j];
        }
        for i in 0..p {
            it.y[i] += alpha * dy[i];
        }
        for i in 0..m {
            it.s[i] += alpha * ds[i];
            it.z[i] += alpha * dz[i];
        }
        last_step = alpha;
    }

    let it = best.map(|(_, b)| b).unwrap_or(it);
    let met = metrics(&cp, &it);
    let iters = history.len().saturating_sub(1);
    Ok(finish(prog, &cp, &it, SolveStatus::NumericalFailure, &met, iters, history))
}
