//! Jordan-algebra primitives and Nesterov–Todd scaling for the nonnegative
//! orthant and the second-order cone.

use crate::program::ConeKind;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `x₀² − ‖x₁‖²`, evaluated as a product to limit cancellation.
fn soc_det(x: &[f64]) -> f64 {
    let n1 = norm(&x[1..]);
    (x[0] - n1) * (x[0] + n1)
}

/// Smallest eigenvalue of `x` in the Jordan algebra of the cone.
pub(crate) fn min_eig(kind: ConeKind, x: &[f64]) -> f64 {
    match kind {
        ConeKind::NonNeg => x.iter().copied().fold(f64::INFINITY, f64::min),
        ConeKind::SecondOrder => x[0] - norm(&x[1..]),
    }
}

/// Contribution of one block to the barrier degree.
pub(crate) fn degree(kind: ConeKind, dim: usize) -> usize {
    match kind {
        ConeKind::NonNeg => dim,
        ConeKind::SecondOrder => 1,
    }
}

pub(crate) fn set_identity(kind: ConeKind, out: &mut [f64]) {
    match kind {
        ConeKind::NonNeg => out.fill(1.0),
        ConeKind::SecondOrder => {
            out.fill(0.0);
            out[0] = 1.0;
        }
    }
}

/// `out = u ∘ v`.
pub(crate) fn jordan_product(kind: ConeKind, u: &[f64], v: &[f64], out: &mut [f64]) {
    match kind {
        ConeKind::NonNeg => {
            for i in 0..u.len() {
                out[i] = u[i] * v[i];
            }
        }
        ConeKind::SecondOrder => {
            out[0] = dot(u, v);
            for i in 1..u.len() {
                out[i] = u[0] * v[i] + v[0] * u[i];
            }
        }
    }
}

/// `out = λ ⋄ x`, the solution `y` of `λ ∘ y = x`. Requires `λ` interior.
pub(crate) fn jordan_div(kind: ConeKind, lam: &[f64], x: &[f64], out: &mut [f64]) {
    match kind {
        ConeKind::NonNeg => {
            for i in 0..lam.len() {
                out[i] = x[i] / lam[i];
            }
        }
        ConeKind::SecondOrder => {
            let det = soc_det(lam);
            let l1x1 = dot(&lam[1..], &x[1..]);
            let y0 = (lam[0] * x[0] - l1x1) / det;
            out[0] = y0;
            for i in 1..lam.len() {
                out[i] = (x[i] - y0 * lam[i]) / lam[0];
            }
        }
    }
}

/// Largest `α ≥ 0` with `x + α·d` in the cone (`+∞` if unbounded). `x` must be
/// interior.
pub(crate) fn max_step(kind: ConeKind, x: &[f64], d: &[f64]) -> f64 {
    match kind {
        ConeKind::NonNeg => x
            .iter()
            .zip(d)
            .filter(|(_, &di)| di < 0.0)
            .map(|(&xi, &di)| -xi / di)
            .fold(f64::INFINITY, f64::min),
        ConeKind::SecondOrder => {
            // det(x + αd) = aα² + bα + c with c > 0.
            let a = soc_det(d);
            let b = 2.0 * (x[0] * d[0] - dot(&x[1..], &d[1..]));
            let c = soc_det(x);
            smallest_positive_root(a, b, c)
        }
    }
}

fn smallest_positive_root(a: f64, b: f64, c: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return f64::INFINITY;
    }
    if a.abs() <= 1e-14 * scale {
        return if b < 0.0 { -c / b } else { f64::INFINITY };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if q == 0.0 {
        let r = (-c / a).abs().sqrt();
        (r, -r)
    } else {
        (q / a, c / q)
    };
    [r1, r2]
        .into_iter()
        .filter(|r| *r > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// Nesterov–Todd scaling `W` of one cone block, with `W·z = W⁻¹·s = λ`.
#[derive(Debug, Clone)]
pub(crate) enum Scaling {
    /// `W = diag(w)`.
    NonNeg { w: Vec<f64> },
    /// `W = η·W̄`, `W̄ = [w₀ w₁ᵀ; w₁ I + w₁w₁ᵀ/(1+w₀)]` with `w₀² − ‖w₁‖² = 1`.
    Soc { eta: f64, wbar: Vec<f64> },
}

impl Scaling {
    pub(crate) fn identity(kind: ConeKind, dim: usize) -> Self {
        match kind {
            ConeKind::NonNeg => Scaling::NonNeg { w: vec![1.0; dim] },
            ConeKind::SecondOrder => {
                let mut wbar = vec![0.0; dim];
                wbar[0] = 1.0;
                Scaling::Soc { eta: 1.0, wbar }
            }
        }
    }

    /// Returns `None` when `s` or `z` is not strictly interior.
    pub(crate) fn compute(kind: ConeKind, s: &[f64], z: &[f64]) -> Option<Self> {
        match kind {
            ConeKind::NonNeg => {
                let mut w = Vec::with_capacity(s.len());
                for (&si, &zi) in s.iter().zip(z) {
                    if !(si > 0.0 && zi > 0.0) {
                        return None;
                    }
                    w.push((si / zi).sqrt());
                }
                Some(Scaling::NonNeg { w })
            }
            ConeKind::SecondOrder => {
                let ds = soc_det(s);
                let dz = soc_det(z);
                if !(ds > 0.0 && dz > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
                    return None;
                }
                let rs = ds.sqrt();
                let rz = dz.sqrt();
                let sb: Vec<f64> = s.iter().map(|v| v / rs).collect();
                let zb: Vec<f64> = z.iter().map(|v| v / rz).collect();
                let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
                let mut wbar = vec![0.0; s.len()];
                wbar[0] = (sb[0] + zb[0]) / (2.0 * gamma);
                for i in 1..s.len() {
                    wbar[i] = (sb[i] - zb[i]) / (2.0 * gamma);
                }
                // Renormalize so that det(w̄) = 1 exactly.
                let dw = soc_det(&wbar);
                if !(dw > 0.0) {
                    return None;
                }
                let r = dw.sqrt();
                wbar.iter_mut().for_each(|v| *v /= r);
                let eta = (ds / dz).sqrt().sqrt();
                Some(Scaling::Soc { eta, wbar })
            }
        }
    }

    /// `out = W·v`.
    pub(crate) fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::NonNeg { w } => {
                for i in 0..v.len() {
                    out[i] = w[i] * v[i];
                }
            }
            Scaling::Soc { eta, wbar } => soc_apply(*eta, wbar, v, out, false),
        }
    }

    /// `out = W⁻¹·v`.
    pub(crate) fn apply_inv(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::NonNeg { w } => {
                for i in 0..v.len() {
                    out[i] = v[i] / w[i];
                }
            }
            Scaling::Soc { eta, wbar } => soc_apply(1.0 / eta, wbar, v, out, true),
        }
    }
}

fn soc_apply(factor: f64, w: &[f64], v: &[f64], out: &mut [f64], inverse: bool) {
    // W̄⁻¹ = J·W̄·J, which flips the sign of the off-diagonal blocks.
    let sgn = if inverse { -1.0 } else { 1.0 };
    let w1v1 = dot(&w[1..], &v[1..]);
    out[0] = factor * (w[0] * v[0] + sgn * w1v1);
    let coef = sgn * v[0] + w1v1 / (1.0 + w[0]);
    for i in 1..v.len() {
        out[i] = factor * (v[i] + coef * w[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    #[test]
    fn nt_scaling_maps_z_and_s_to_same_point() {
        let s = [2.0, 0.3, -1.1, 0.4];
        let z = [1.5, -0.7, 0.2, 0.9];
        let w = Scaling::compute(ConeKind::SecondOrder, &s, &z).unwrap();
        let mut wz = [0.0; 4];
        let mut winv_s = [0.0; 4];
        w.apply(&z, &mut wz);
        w.apply_inv(&s, &mut winv_s);
        assert!(close(&wz, &winv_s, 1e-12), "{wz:?} vs {winv_s:?}");
        let mut back = [0.0; 4];
        w.apply_inv(&wz, &mut back);
        assert!(close(&back, &z, 1e-12));
    }

    #[test]
    fn jordan_div_inverts_product() {
        let lam = [3.0, 1.0, -0.5];
        let x = [0.4, 2.0, 1.0];
        let mut y = [0.0; 3];
        jordan_div(ConeKind::SecondOrder, &lam, &x, &mut y);
        let mut back = [0.0; 3];
        jordan_product(ConeKind::SecondOrder, &lam, &y, &mut back);
        assert!(close(&back, &x, 1e-12));
    }

    #[test]
    fn step_to_soc_boundary() {
        // (1, 0) moving along (0, 1) hits the boundary at α = 1.
        let a = max_step(ConeKind::SecondOrder, &[1.0, 0.0], &[0.0, 1.0]);
        assert!((a - 1.0).abs() < 1e-14);
        // Moving along the axis never leaves.
        let a = max_step(ConeKind::SecondOrder, &[1.0, 0.0], &[1.0, 0.5]);
        assert!(a.is_infinite());
        let a = max_step(ConeKind::NonNeg, &[1.0, 2.0], &[-2.0, -1.0]);
        assert!((a - 0.5).abs() < 1e-15);
    }
}
