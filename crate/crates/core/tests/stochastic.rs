use approx::assert_abs_diff_eq;
use flexmarket::stochastic::*;
use flexmarket::StochasticError;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn nine_bus_wind() -> WindModel {
    flexmarket::case::Case::embedded("ninebus").unwrap().wind
}

fn one_period(cov: DMatrix<f64>) -> WindModel {
    let n = cov.nrows();
    WindModel::new(vec![vec![1.0; n]], vec![cov]).unwrap()
}

#[test]
fn aggregate_of_diagonal() {
    let m = one_period(DMatrix::from_diagonal(&nalgebra::dvector![0.01, 0.04]));
    let a = aggregate_stats(&m).unwrap();
    assert_abs_diff_eq!(a.sigma[0] * a.sigma[0], 0.05, epsilon = 1e-15);
}

#[test]
fn aggregate_of_zero_covariance() {
    let m = WindModel::deterministic(vec![vec![0.3, 0.2]; 4]).unwrap();
    let a = aggregate_stats(&m).unwrap();
    assert!(a.sigma.iter().all(|s| *s == 0.0));
}

#[test]
fn aggregate_of_constant_covariance() {
    let m = one_period(DMatrix::from_element(3, 3, 0.01));
    let a = aggregate_stats(&m).unwrap();
    assert_abs_diff_eq!(a.sigma[0] * a.sigma[0], 0.09, epsilon = 1e-15);
}

#[test]
fn cumulative_covariance_is_diagonal() {
    let m = WindModel::diagonal_relative(vec![vec![1.0], vec![2.0], vec![3.0]], 0.1).unwrap();
    let a = aggregate_stats(&m).unwrap();
    let c = &a.cumulative_cov[2];
    assert_eq!(c.shape(), (3, 3));
    for (i, s) in [0.1, 0.2, 0.3].iter().enumerate() {
        assert_abs_diff_eq!(c[(i, i)], s * s, epsilon = 1e-15);
    }
    assert_eq!(c[(0, 1)], 0.0);
}

#[test]
fn indefinite_covariance_is_rejected() {
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    let err = WindModel::new(vec![vec![1.0, 1.0]], vec![c]).unwrap_err();
    assert!(matches!(err, StochasticError::NotPsd { period: 1 }));
}

#[test]
fn quantile_reference_values() {
    // Reference quantiles from published normal tables.
    let cases = [
        (0.5, 0.0),
        (0.8, 0.841_621_233_572_914_3),
        (0.9, 1.281_551_565_544_600_4),
        (0.975, 1.959_963_984_540_054),
        (0.999, 3.090_232_306_167_813_5),
        (1e-10, -6.361_340_902_404_056),
    ];
    for (p, q) in cases {
        assert_abs_diff_eq!(quantile_standard_normal(p).unwrap(), q, epsilon = 1e-9);
    }
}

#[test]
fn quantile_rejects_bad_probability() {
    for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
        assert!(quantile_standard_normal(p).is_err(), "{p}");
    }
}

#[test]
fn count_zero_is_an_error() {
    let m = WindModel::diagonal_relative(vec![vec![1.0]], 0.3).unwrap();
    let s = DeviationSampler::new(Family::Normal, &m, 1);
    assert!(matches!(sample_deviations(&s, 0, 0..1), Err(StochasticError::EmptySample)));
}

#[test]
fn unknown_family() {
    assert!(matches!("cauchy".parse::<Family>(), Err(StochasticError::UnknownFamily(_))));
    assert_eq!("Logistic".parse::<Family>().unwrap(), Family::Logistic);
}

fn std_of(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[test]
fn every_family_matches_target_std() {
    let mean = vec![vec![0.5, 0.2]];
    let m = WindModel::diagonal_relative(mean, 0.3).unwrap();
    for f in Family::ALL {
        let s = DeviationSampler::new(f, &m, 11);
        let d = sample_deviations(&s, 100_000, 0..1).unwrap();
        for (w, target) in [(0, 0.15), (1, 0.06)] {
            let (mu, sd) = std_of((0..d.count).map(|i| d.get(i, 0)[w]));
            assert!((sd / target - 1.0).abs() < 0.02, "{f} unit {w}: std {sd} target {target}");
            assert!(mu.abs() < 4.0 * target / (1e5f64).sqrt(), "{f} unit {w}: mean {mu}");
        }
    }
}

#[test]
fn uniform_support_is_bounded() {
    let m = WindModel::diagonal_relative(vec![vec![1.0]], 0.3).unwrap();
    let s = DeviationSampler::new(Family::Uniform, &m, 5);
    let d = sample_deviations(&s, 50_000, 0..1).unwrap();
    let bound = 3f64.sqrt() * 0.3;
    assert!(d.raw().iter().all(|x| x.abs() <= bound + 1e-15));
    assert!(d.raw().iter().any(|x| x.abs() > 0.99 * bound));
}

#[test]
fn aggregate_mean_is_near_zero() {
    let c = nine_bus_wind();
    let s = DeviationSampler::new(Family::Normal, &c, 3);
    let d = sample_deviations(&s, 100_000, 0..24).unwrap();
    let a = aggregate_stats(&c).unwrap();
    for t in 0..24 {
        let mean = (0..d.count).map(|i| d.get(i, t).iter().sum::<f64>()).sum::<f64>() / d.count as f64;
        assert!(mean.abs() <= 4.0 * a.sigma[t] / (1e5f64).sqrt(), "period {t}: {mean}");
    }
}

#[test]
fn samples_are_reproducible() {
    let m = nine_bus_wind();
    let s = DeviationSampler::new(Family::Logistic, &m, 99);
    let a = sample_deviations(&s, 10_000, 3..7).unwrap();
    let b = sample_deviations(&s, 10_000, 3..7).unwrap();
    assert_eq!(a, b);
    let other = DeviationSampler::new(Family::Logistic, &m, 100);
    assert_ne!(a, sample_deviations(&other, 10_000, 3..7).unwrap());
}

#[test]
fn samples_do_not_depend_on_thread_count() {
    let m = nine_bus_wind();
    let s = DeviationSampler::new(Family::Weibull, &m, 4);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| sample_deviations(&s, 3 * SAMPLE_CHUNK + 17, 0..2).unwrap());
    let b = four.install(|| sample_deviations(&s, 3 * SAMPLE_CHUNK + 17, 0..2).unwrap());
    assert_eq!(a, b);
}

#[test]
fn deterministic_model_samples_zero() {
    let m = WindModel::deterministic(vec![vec![0.4, 0.1]; 3]).unwrap();
    let s = DeviationSampler::new(Family::Laplace, &m, 8);
    let d = sample_deviations(&s, 1000, 0..3).unwrap();
    assert!(d.raw().iter().all(|x| *x == 0.0));
}

#[test]
fn correlated_samples_follow_covariance() {
    let c = DMatrix::from_row_slice(2, 2, &[0.04, 0.018, 0.018, 0.09]);
    let m = one_period(c.clone());
    let s = DeviationSampler::new(Family::Normal, &m, 21);
    let d = sample_deviations(&s, 100_000, 0..1).unwrap();
    let n = d.count as f64;
    let cov01 = (0..d.count).map(|i| d.get(i, 0)[0] * d.get(i, 0)[1]).sum::<f64>() / n;
    assert!((cov01 - 0.018).abs() < 0.002, "{cov01}");
}

proptest! {
    #[test]
    fn quantile_round_trips(p in 1e-9f64..(1.0 - 1e-9)) {
        let q = quantile_standard_normal(p).unwrap();
        prop_assert!((standard_normal_cdf(q) - p).abs() <= 1e-12);
    }

    #[test]
    fn quantile_is_odd_and_increasing(p in 1e-9f64..0.5, dp in 1e-6f64..1e-2) {
        let a = quantile_standard_normal(p).unwrap();
        let b = quantile_standard_normal(1.0 - p).unwrap();
        prop_assert!((a + b).abs() <= 1e-12);
        let c = quantile_standard_normal((p + dp).min(0.999_999)).unwrap();
        prop_assert!(c > a);
    }

    #[test]
    fn diagonal_aggregate_is_root_trace(d in proptest::collection::vec(0.0f64..1.0, 1..6)) {
        let trace: f64 = d.iter().sum();
        let m = one_period(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)));
        let a = aggregate_stats(&m).unwrap();
        prop_assert!((a.sigma[0] - trace.sqrt()).abs() < 1e-12);
    }
}
