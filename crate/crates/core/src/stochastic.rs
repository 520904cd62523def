//! Wind forecast uncertainty: per-period covariance, aggregate deviation
//! statistics and zero-mean deviation samplers.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::StochasticError;

/// Forecast mean and deviation covariance of the wind units.
#[derive(Debug, Clone, PartialEq)]
pub struct WindModel {
    /// `mean[t][k]`, per-unit.
    pub mean: Vec<Vec<f64>>,
    /// `covariance[t]`, n_ω × n_ω.
    pub covariance: Vec<DMatrix<f64>>,
}

const PSD_TOL: f64 = 1e-10;

impl WindModel {
    pub fn new(mean: Vec<Vec<f64>>, covariance: Vec<DMatrix<f64>>) -> Result<Self, StochasticError> {
        if mean.len() != covariance.len() {
            return Err(StochasticError::Shape(format!(
                "{} mean periods but {} covariance matrices",
                mean.len(),
                covariance.len()
            )));
        }
        let nw = mean.first().map_or(0, Vec::len);
        for (t, (m, c)) in mean.iter().zip(&covariance).enumerate() {
            if m.len() != nw || c.nrows() != nw || c.ncols() != nw {
                return Err(StochasticError::Shape(format!("period {} has inconsistent dimensions", t + 1)));
            }
            if m.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(StochasticError::Shape(format!("period {} has a negative or non-finite mean", t + 1)));
            }
            for i in 0..nw {
                for j in 0..nw {
                    if !c[(i, j)].is_finite() || (c[(i, j)] - c[(j, i)]).abs() > 1e-12 * (1.0 + c[(i, j)].abs()) {
                        return Err(StochasticError::NotPsd { period: t + 1 });
                    }
                }
            }
            psd_sqrt(c).ok_or(StochasticError::NotPsd { period: t + 1 })?;
        }
        Ok(WindModel { mean, covariance })
    }

    /// Zero covariance in every period.
    pub fn deterministic(mean: Vec<Vec<f64>>) -> Result<Self, StochasticError> {
        let nw = mean.first().map_or(0, Vec::len);
        let cov = vec![DMatrix::zeros(nw, nw); mean.len()];
        Self::new(mean, cov)
    }

    /// Independent components with standard deviation `ratio·mean`.
    pub fn diagonal_relative(mean: Vec<Vec<f64>>, ratio: f64) -> Result<Self, StochasticError> {
        if !(ratio >= 0.0) || !ratio.is_finite() {
            return Err(StochasticError::Shape(format!("ratio must be nonnegative, got {ratio}")));
        }
        let cov = mean
            .iter()
            .map(|m| {
                let d: Vec<f64> = m.iter().map(|v| (ratio * v).powi(2)).collect();
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d))
            })
            .collect();
        Self::new(mean, cov)
    }

    pub fn horizon(&self) -> usize {
        self.mean.len()
    }

    pub fn num_units(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }

    /// Symmetric square root `Σₜ^{1/2}`.
    pub fn cov_sqrt(&self, t: usize) -> DMatrix<f64> {
        psd_sqrt(&self.covariance[t]).expect("covariance validated at construction")
    }

    pub fn component_std(&self, t: usize) -> Vec<f64> {
        let c = &self.covariance[t];
        (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect()
    }

    /// Same mean, zero covariance.
    pub fn without_uncertainty(&self) -> Self {
        Self::deterministic(self.mean.clone()).expect("mean already validated")
    }

    /// Total forecast output in period `t`.
    pub fn total_mean(&self, t: usize) -> f64 {
        self.mean[t].iter().sum()
    }
}

fn psd_sqrt(c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = c.nrows();
    if n == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let is_diag = (0..n).all(|i| (0..n).all(|j| i == j || c[(i, j)] == 0.0));
    let scale = (0..n).map(|i| c[(i, i)].abs()).fold(1.0_f64, f64::max);
    if is_diag {
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            if c[(i, i)] < -PSD_TOL * scale {
                return None;
            }
            out[(i, i)] = c[(i, i)].max(0.0).sqrt();
        }
        return Some(out);
    }
    let eig = c.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -PSD_TOL * scale) {
        return None;
    }
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Some(v * DMatrix::from_diagonal(&d) * v.transpose())
}

/// Statistics of `Ωₜ = 1ᵀωₜ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateDeviation {
    pub sigma: Vec<f64>,
    /// `cumulative_cov[t]` is the covariance of `(Ω₁, …, Ω_{t+1})`.
    pub cumulative_cov: Vec<DMatrix<f64>>,
}

/// `σₜ² = 1ᵀΣₜ1`, periods treated as independent.
pub fn aggregate_stats(model: &WindModel) -> Result<AggregateDeviation, StochasticError> {
    let mut sigma = Vec::with_capacity(model.horizon());
    for (t, c) in model.covariance.iter().enumerate() {
        let var = c.sum();
        if var < -PSD_TOL * (1.0 + c.abs().max()) {
            return Err(StochasticError::NotPsd { period: t + 1 });
        }
        psd_sqrt(c).ok_or(StochasticError::NotPsd { period: t + 1 })?;
        sigma.push(var.max(0.0).sqrt());
    }
    let cumulative_cov = (1..=sigma.len())
        .map(|t| {
            let d: Vec<f64> = sigma[..t].iter().map(|s| s * s).collect();
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d))
        })
        .collect();
    Ok(AggregateDeviation { sigma, cumulative_cov })
}

/// Standardized (zero mean, unit variance) deviation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Laplace,
    Logistic,
    Normal,
    Uniform,
    Weibull,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Laplace,
        Family::Logistic,
        Family::Normal,
        Family::Uniform,
        Family::Weibull,
    ];

    /// How the family is centred and scaled to unit variance.
    pub fn construction(self) -> &'static str {
        match self {
            Family::Laplace => "laplace(0, 1/sqrt2)",
            Family::Logistic => "logistic(0, sqrt3/pi)",
            Family::Normal => "normal(0, 1)",
            Family::Uniform => "uniform(-sqrt3, sqrt3)",
            Family::Weibull => "weibull(k=2) minus its mean, scaled to unit variance",
        }
    }

    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Family::Normal => StandardNormal.sample(rng),
            Family::Uniform => {
                let r = 3f64.sqrt();
                rng.random_range(-r..=r)
            }
            Family::Laplace => {
                let u: f64 = open_unit(rng) - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln() / std::f64::consts::SQRT_2
            }
            Family::Logistic => {
                let u = open_unit(rng);
                3f64.sqrt() / std::f64::consts::PI * (u / (1.0 - u)).ln()
            }
            Family::Weibull => {
                // Shape 2, unit scale: mean √π/2, variance 1 − π/4.
                let u = open_unit(rng);
                let w = (-(1.0 - u).ln()).sqrt();
                let mean = std::f64::consts::PI.sqrt() / 2.0;
                (w - mean) / (1.0 - std::f64::consts::FRAC_PI_4).sqrt()
            }
        }
    }
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Laplace => "laplace",
            Family::Logistic => "logistic",
            Family::Normal => "normal",
            Family::Uniform => "uniform",
            Family::Weibull => "weibull",
        })
    }
}

impl FromStr for Family {
    type Err = StochasticError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" => Ok(Family::Laplace),
            "logistic" => Ok(Family::Logistic),
            "normal" | "gaussian" => Ok(Family::Normal),
            "uniform" => Ok(Family::Uniform),
            "weibull" => Ok(Family::Weibull),
            other => Err(StochasticError::UnknownFamily(other.to_string())),
        }
    }
}

/// Seed for worker `i` derived from a master seed (SplitMix64 finalizer over
/// `master + (i + 1)·φ`).
pub fn worker_seed(master: u64, i: u64) -> u64 {
    let mut z = master.wrapping_add((i.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples drawn per independently seeded chunk. Fixed so results do not
/// depend on the number of threads.
pub const SAMPLE_CHUNK: usize = 4096;

/// Draws `ωₜ = Σₜ^{1/2}·ξ` with `ξ` iid from a standardized family.
#[derive(Debug, Clone)]
pub struct DeviationSampler {
    pub family: Family,
    pub seed: u64,
    factors: Vec<DMatrix<f64>>,
}

impl DeviationSampler {
    pub fn new(family: Family, model: &WindModel, seed: u64) -> Self {
        let factors = (0..model.horizon()).map(|t| model.cov_sqrt(t)).collect();
        DeviationSampler { family, seed, factors }
    }

    pub fn num_units(&self) -> usize {
        self.factors.first().map_or(0, |f| f.nrows())
    }

    pub fn horizon(&self) -> usize {
        self.factors.len()
    }
}

/// Tensor of deviations, `count × periods × n_ω`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationSamples {
    pub count: usize,
    /// 0-based periods covered.
    pub periods: Range<usize>,
    pub num_units: usize,
    data: Vec<f64>,
}

impl DeviationSamples {
    /// Builds a tensor from raw values laid out as `[sample][period][unit]`.
    pub fn from_raw(
        count: usize,
        periods: Range<usize>,
        num_units: usize,
        data: Vec<f64>,
    ) -> Result<Self, StochasticError> {
        if data.len() != count * periods.len() * num_units {
            return Err(StochasticError::Shape(format!(
                "{} values for {} × {} × {}",
                data.len(),
                count,
                periods.len(),
                num_units
            )));
        }
        Ok(DeviationSamples { count, periods, num_units, data })
    }

    /// Deviations of sample `s` in absolute period `t`.
    pub fn get(&self, s: usize, t: usize) -> &[f64] {
        let np = self.periods.len();
        let off = (s * np + (t - self.periods.start)) * self.num_units;
        &self.data[off..off + self.num_units]
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Draws `count` samples over `periods` (0-based, half-open).
pub fn sample_deviations(
    sampler: &DeviationSampler,
    count: usize,
    periods: Range<usize>,
) -> Result<DeviationSamples, StochasticError> {
    if count == 0 {
        return Err(StochasticError::EmptySample);
    }
    if periods.end > sampler.horizon() || periods.start > periods.end {
        return Err(StochasticError::Shape(format!(
            "periods {}..{} outside horizon {}",
            periods.start,
            periods.end,
            sampler.horizon()
        )));
    }
    let nw = sampler.num_units();
    let np = periods.len();
    let per_sample = np * nw;
    let mut data = vec![0.0; count * per_sample];
    data.par_chunks_mut(SAMPLE_CHUNK * per_sample.max(1))
        .enumerate()
        .for_each(|(c, chunk)| {
            if per_sample == 0 {
                return;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(sampler.seed, c as u64));
            let mut xi = vec![0.0; nw];
            for sample in chunk.chunks_mut(per_sample) {
                for (k, t) in periods.clone().enumerate() {
                    for v in xi.iter_mut() {
                        *v = sampler.family.draw(&mut rng);
                    }
                    let f = &sampler.factors[t];
                    let out = &mut sample[k * nw..(k + 1) * nw];
                    for i in 0..nw {
                        out[i] = (0..nw).map(|j| f[(i, j)] * xi[j]).sum();
                    }
                }
            }
        });
    Ok(DeviationSamples {
        count,
        periods,
        num_units: nw,
        data,
    })
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `Φ(x)`.
pub fn standard_normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// `1 − Φ(x)` without cancellation for large `x`.
pub fn standard_normal_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

/// `Φ⁻¹(p)` for `0 < p < 1`.
pub fn quantile_standard_normal(p: f64) -> Result<f64, StochasticError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StochasticError::Probability(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Evaluate on the lower tail and mirror, which keeps the result odd.
    let q = p.min(1.0 - p);
    let n = std_normal();
    let mut x = n.inverse_cdf(q);
    // Newton polish against the CDF.
    for _ in 0..3 {
        let err = n.cdf(x) - q;
        let dens = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if dens <= 0.0 || err == 0.0 {
            break;
        }
        x -= err / dens;
    }
    Ok(if p < 0.5 { x } else { -x })
}
