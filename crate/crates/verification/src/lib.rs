//! Reference solvers used to cross-check the clearing results: a dense
//! quadratic-program interior-point method and a bus-angle dispatch model
//! that share no code with the conic formulation.

use flexmarket::bids::MdfBid;
use flexmarket::grid::Network;
use nalgebra::{DMatrix, DVector};

/// `min ½xᵀQx + cᵀx` subject to `Ax = b`, `Gx ≤ h`.
pub struct DenseQp {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: Vec<(Vec<(usize, f64)>, f64)>,
    pub g: Vec<(Vec<(usize, f64)>, f64)>,
}

impl DenseQp {
    pub fn new(n: usize) -> Self {
        DenseQp {
            q: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
            a: Vec::new(),
            g: Vec::new(),
        }
    }

    pub fn le(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.g.push((row, rhs));
    }

    pub fn eq(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.a.push((row, rhs));
    }

    /// Mehrotra predictor-corrector on the reduced KKT system. Returns `x`.
    pub fn solve(&self) -> DVector<f64> {
        let n = self.c.len();
        let dense = |rows: &[(Vec<(usize, f64)>, f64)]| {
            let mut m = DMatrix::zeros(rows.len(), n);
            for (i, (r, _)) in rows.iter().enumerate() {
                for &(j, v) in r {
                    m[(i, j)] += v;
                }
            }
            (m, DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1)))
        };
        let (a, b) = dense(&self.a);
        let (g, h) = dense(&self.g);
        let (me, mi) = (a.nrows(), g.nrows());
        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(me);
        let mut s = (&h - &g * &x).map(|v| v.max(1.0));
        let mut z = DVector::from_element(mi, 1.0);
        let scale = 1.0 + self.c.amax() + h.amax() + b.amax();
        for _ in 0..200 {
            let rd = &self.q * &x + &self.c + a.transpose() * &y + g.transpose() * &z;
            let re = &a * &x - &b;
            let ri = &g * &x + &s - &h;
            let mu = s.dot(&z) / mi as f64;
            if rd.amax().max(re.amax()).max(ri.amax()) < 1e-12 * scale && mu < 1e-14 * scale {
                break;
            }
            let w = z.component_div(&s);
            let mut k = DMatrix::zeros(n + me, n + me);
            let gw = DMatrix::from_fn(mi, n, |i, j| g[(i, j)] * w[i]);
            k.view_mut((0, 0), (n, n)).copy_from(&(&self.q + g.transpose() * gw));
            k.view_mut((0, n), (n, me)).copy_from(&a.transpose());
            k.view_mut((n, 0), (me, n)).copy_from(&a);
            let lu = k.lu();
            let step = |rc: &DVector<f64>| {
                let mut rhs = DVector::zeros(n + me);
                let top = -&rd - g.transpose() * w.component_mul(&ri) + g.transpose() * rc.component_div(&s);
                rhs.rows_mut(0, n).copy_from(&top);
                rhs.rows_mut(n, me).copy_from(&(-&re));
                let sol = lu.solve(&rhs).expect("singular KKT system");
                let dx = sol.rows(0, n).into_owned();
                let dy = sol.rows(n, me).into_owned();
                let dz = w.component_mul(&(&g * &dx + &ri)) - rc.component_div(&s);
                let ds = -(rc + s.component_mul(&dz)).component_div(&z);
                (dx, dy, dz, ds)
            };
            let max_step = |v: &DVector<f64>, dv: &DVector<f64>| {
                v.iter().zip(dv.iter()).filter(|(_, d)| **d < 0.0).map(|(v, d)| -v / d).fold(1.0f64, f64::min)
            };
            let (_, _, dz_a, ds_a) = step(&s.component_mul(&z));
            let alpha = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
            let mu_aff = (&s + alpha * &ds_a).dot(&(&z + alpha * &dz_a)) / mi as f64;
            let sigma = (mu_aff / mu).powi(3);
            let rc = s.component_mul(&z) + ds_a.component_mul(&dz_a) - DVector::from_element(mi, sigma * mu);
            let (dx, dy, dz, ds) = step(&rc);
            let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
            x += alpha * dx;
            y += alpha * dy;
            z += alpha * dz;
            s += alpha * ds;
        }
        x
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }
}

/// Deterministic multi-period dispatch with bids, written with bus voltage
/// angles instead of shift factors. `wind[t]` holds per-unit wind output per
/// wind unit. Returns the optimal total cost in $.
pub fn angle_dispatch(network: &Network, wind: &[Vec<f64>], bids: &[MdfBid], periods: &[usize]) -> f64 {
    let base = network.power_base;
    let nb = network.num_buses();
    let ng = network.generators.len();
    let mut next = 0;
    let mut alloc = |k: usize| {
        let v: Vec<usize> = (next..next + k).collect();
        next += k;
        v
    };
    let pg: Vec<Vec<usize>> = periods.iter().map(|_| alloc(ng)).collect();
    let theta: Vec<Vec<usize>> = periods.iter().map(|_| alloc(nb)).collect();
    let pf: Vec<Vec<Option<usize>>> = periods
        .iter()
        .map(|&t| bids.iter().map(|b| (t + 1 >= b.t_start && t < b.t_end).then(|| alloc(1)[0])).collect())
        .collect();
    let alpha: Vec<Vec<usize>> = bids.iter().map(|_| alloc(4)).collect();
    let mut qp = DenseQp::new(next);
    let mut constant = 0.0;

    for (k, &t) in periods.iter().enumerate() {
        for (g, gen) in network.generators.iter().enumerate() {
            let v = pg[k][g];
            qp.q[(v, v)] = 2.0 * gen.c2 * base * base;
            qp.c[v] = gen.c1 * base;
            constant += gen.c0;
            qp.le(vec![(v, 1.0)], gen.p_max_mw / base);
            qp.le(vec![(v, -1.0)], -gen.p_min_mw / base);
        }
        qp.eq(vec![(theta[k][network.slack_bus - 1], 1.0)], 0.0);
        for bus in 1..=nb {
            // generation + wind + aggregator − load = net outflow
            let mut row = Vec::new();
            let mut rhs = 0.0;
            for (g, gen) in network.generators.iter().enumerate() {
                if gen.bus == bus {
                    row.push((pg[k][g], 1.0));
                }
            }
            for (i, b) in bids.iter().enumerate() {
                if let (true, Some(v)) = (b.bus == bus, pf[k][i]) {
                    row.push((v, 1.0));
                }
            }
            for (w, u) in network.wind_units.iter().enumerate() {
                if u.bus == bus {
                    rhs -= wind[t][w];
                }
            }
            for l in &network.loads {
                if l.bus == bus {
                    rhs += l.profile[t];
                }
            }
            for line in &network.lines {
                let y = 1.0 / line.reactance;
                if line.from_bus == bus {
                    row.push((theta[k][line.from_bus - 1], -y));
                    row.push((theta[k][line.to_bus - 1], y));
                } else if line.to_bus == bus {
                    row.push((theta[k][line.to_bus - 1], -y));
                    row.push((theta[k][line.from_bus - 1], y));
                }
            }
            qp.eq(row, rhs);
        }
        for line in &network.lines {
            let y = 1.0 / line.reactance;
            let (f, to) = (theta[k][line.from_bus - 1], theta[k][line.to_bus - 1]);
            let cap = line.flow_limit_mw / base;
            qp.le(vec![(f, y), (to, -y)], cap);
            qp.le(vec![(f, -y), (to, y)], cap);
        }
    }

    for (i, b) in bids.iter().enumerate() {
        let [rm, rp, em, ep] = [alpha[i][0], alpha[i][1], alpha[i][2], alpha[i][3]];
        qp.c[rp] += b.gamma_p;
        qp.c[rm] -= b.gamma_p;
        qp.c[ep] += b.gamma_e;
        qp.c[em] -= b.gamma_e;
        qp.le(vec![(rm, -1.0)], -b.r_min);
        qp.le(vec![(rm, 1.0)], 0.0);
        qp.le(vec![(rp, -1.0)], 0.0);
        qp.le(vec![(rp, 1.0)], b.r_max);
        qp.le(vec![(em, -1.0)], -b.e_min);
        qp.le(vec![(em, 1.0)], 0.0);
        qp.le(vec![(ep, -1.0)], 0.0);
        qp.le(vec![(ep, 1.0)], b.e_max);
        let mut cum: Vec<(usize, f64)> = Vec::new();
        for k in 0..periods.len() {
            let Some(v) = pf[k][i] else { continue };
            qp.le(vec![(v, 1.0), (rp, -1.0)], 0.0);
            qp.le(vec![(v, -1.0), (rm, 1.0)], 0.0);
            // Stored energy is minus the cumulative discharge.
            cum.push((v, 1.0));
            let mut upper = cum.clone();
            upper.push((em, 1.0));
            qp.le(upper, 0.0);
            let mut lower: Vec<(usize, f64)> = cum.iter().map(|&(j, c)| (j, -c)).collect();
            lower.push((ep, -1.0));
            qp.le(lower, 0.0);
        }
    }

    let x = qp.solve();
    qp.objective(&x) + constant
}
