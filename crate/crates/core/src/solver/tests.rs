use super::*;
use crate::measure::Domain;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn samples(fam: MeasurementFamily, mu: &DiscreteMeasure) -> SampleVector {
    forward(mu, fam).unwrap()
}

fn noisy(fam: MeasurementFamily, mu: &DiscreteMeasure, sigma: f64, seed: u64) -> SampleVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = samples(fam, mu);
    for v in y.values.iter_mut() {
        *v += c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * sigma;
    }
    y
}

#[test]
fn zero_samples_give_zero_measure() {
    let fam = MeasurementFamily::fourier(8).unwrap();
    let y = SampleVector::zeros(fam);
    let res = solve(fam, &y, &SolverConfig::new(fam, 1.0)).unwrap();
    assert!(res.measure.is_empty());
    assert_eq!(res.objective, 0.0);
    assert!(res.dual_coefficients.coefficients.iter().all(|v| v.norm() == 0.0));
    assert!(res.optimality.passed);
}

#[test]
fn large_lambda_keeps_unconstrained_point() {
    let fam = MeasurementFamily::fourier(6).unwrap();
    let mu = DiscreteMeasure::new(Domain::Circle, [(0.3, 1.0, 0.2)]).unwrap();
    let y = samples(fam, &mu);
    // ‖⟨y, Φ⟩‖∞ ≤ ‖y‖₁ = 13
    let lambda = 20.0;
    let dual = solve_dual(fam, &y, &SolverConfig::new(fam, lambda)).unwrap();
    for (a, v) in dual.coefficients.coefficients.iter().zip(&y.values) {
        assert!((a - v / lambda).norm() < 1e-15);
    }
    let res = solve(fam, &y, &SolverConfig::new(fam, lambda)).unwrap();
    assert!(res.measure.is_empty());
}

#[test]
fn config_validation() {
    let fam = MeasurementFamily::fourier(4).unwrap();
    let mut cfg = SolverConfig::new(fam, 1.0);
    assert!(cfg.validate(fam).is_ok());
    cfg.dual_grid = 8 * 9 - 1;
    assert!(matches!(cfg.validate(fam), Err(Error::Config(_))));
    let mut cfg = SolverConfig::new(fam, 0.0);
    assert!(cfg.validate(fam).is_err());
    cfg.lambda = 1.0;
    cfg.delta_sup = 1.0;
    assert!(cfg.validate(fam).is_err());
}

#[test]
fn single_spike_matches_closed_form() {
    let fc = 16;
    let fam = MeasurementFamily::fourier(fc).unwrap();
    let t0 = 0.371_234_5;
    let mu = DiscreteMeasure::new(Domain::Circle, [(t0, 3.0, 1.1)]).unwrap();
    let y = samples(fam, &mu);
    let lambda = 0.5;
    let res = solve(fam, &y, &SolverConfig::new(fam, lambda)).unwrap();
    assert_eq!(res.measure.len(), 1);
    let a = res.measure.atoms()[0];
    assert!(Domain::Circle.distance(a.location, t0) < 1e-4 / fc as f64);
    // the single-atom problem is a scalar soft threshold with ‖φ‖² = 2f_c + 1
    let n = fam.size() as f64;
    assert!((a.amplitude - (3.0 - lambda / n)).abs() < 1e-9);
    assert!((a.phase - 1.1).abs() < 1e-9);
    assert!(res.optimality.passed, "{:?}", res.optimality);
}

#[test]
fn fit_scalar_soft_threshold() {
    let fc = 10;
    let fam = MeasurementFamily::fourier(fc).unwrap();
    let mu = DiscreteMeasure::new(Domain::Circle, [(0.25, 2.0, -0.4)]).unwrap();
    let y = samples(fam, &mu);
    let n = fam.size() as f64;
    for lambda in [0.0, 1.0, 20.0, 2.0 * n] {
        let fit = fit_amplitudes(fam, &[0.25], &y, lambda).unwrap();
        let want = (2.0 - lambda / n).max(0.0);
        if want == 0.0 {
            assert!(fit.measure.is_empty());
        } else {
            assert!((fit.measure.atoms()[0].amplitude - want).abs() < 1e-10);
        }
    }
    let empty = fit_amplitudes(fam, &[], &y, 1.0).unwrap();
    assert!(empty.measure.is_empty());
    assert!(fit_amplitudes(fam, &[0.1, 0.1], &y, 1.0).is_err());
}

#[test]
fn fit_recovers_truth_as_lambda_vanishes() {
    let fam = MeasurementFamily::chebyshev(20).unwrap();
    let mu = DiscreteMeasure::new(Domain::Interval, [(-0.5, 1.0, 0.0), (0.1, 2.0, 3.0), (0.6, 0.7, 1.0)]).unwrap();
    let y = samples(fam, &mu);
    let fit = fit_amplitudes(fam, &mu.locations(), &y, 1e-9).unwrap();
    assert!(!fit.ill_conditioned);
    for (a, b) in fit.measure.atoms().iter().zip(mu.atoms()) {
        assert!((a.weight() - b.weight()).norm() < 1e-8);
    }
    let refit = refit_unpenalized(fam, &mu.locations(), &y).unwrap();
    for (a, b) in refit.atoms().iter().zip(mu.atoms()) {
        assert!((a.weight() - b.weight()).norm() < 1e-10);
    }
}

#[test]
fn near_duplicate_support_is_flagged() {
    let fam = MeasurementFamily::fourier(4).unwrap();
    let y = samples(fam, &DiscreteMeasure::new(Domain::Circle, [(0.2, 1.0, 0.0)]).unwrap());
    let fit = fit_amplitudes(fam, &[0.2, 0.2 + 1e-12], &y, 1e-3).unwrap();
    assert!(fit.ill_conditioned);
}

#[test]
fn optimality_of_zero_measure() {
    let fam = MeasurementFamily::fourier(5).unwrap();
    let mu = DiscreteMeasure::new(Domain::Circle, [(0.4, 1.0, 0.0)]).unwrap();
    let y = samples(fam, &mu);
    let zero = DiscreteMeasure::empty(Domain::Circle);
    // ‖⟨y, Φ⟩‖∞ = 11 at the spike
    let r = check_optimality(fam, &zero, &y, 12.0, 1e-5).unwrap();
    assert!(r.passed && r.cond2_residual == 0.0);
    let r = check_optimality(fam, &zero, &y, 10.0, 1e-5).unwrap();
    assert!(!r.passed && r.cond1_value > 10.0);
}

#[test]
fn two_spikes_touch_one_and_agree_with_grid_oracle() {
    let fc = 12;
    let fam = MeasurementFamily::fourier(fc).unwrap();
    let mu = DiscreteMeasure::new(Domain::Circle, [(0.2, 1.0, 0.3), (0.61, 1.5, -2.0)]).unwrap();
    let y = samples(fam, &mu);
    let lambda = 1e-2;
    let res = solve(fam, &y, &SolverConfig::new(fam, lambda)).unwrap();
    for x in mu.locations() {
        assert!((res.dual_coefficients.eval(x).norm() - 1.0).abs() < 1e-3);
    }
    assert!(res.optimality.passed, "{:?}", res.optimality);
    let oracle = grid_lasso_oracle(fam, &y, lambda, 64 * fam.size(), 1e-9).unwrap();
    assert!(oracle.objective >= res.objective - 1e-4 * res.objective.abs());
    assert!((oracle.objective - res.objective).abs() <= 1e-4 * res.objective.abs(), "{} {}", oracle.objective, res.objective);
}

#[test]
fn noisy_chebyshev_solve_is_optimal() {
    let fam = MeasurementFamily::chebyshev(24).unwrap();
    let mu = DiscreteMeasure::new(Domain::Interval, [(-0.6, 5.0, 0.0), (0.05, 3.0, 0.0), (0.7, 4.0, 0.0)]).unwrap();
    let y = noisy(fam, &mu, 0.2, 3);
    let res = solve(fam, &y, &SolverConfig::new(fam, 3.0)).unwrap();
    assert!(res.optimality.passed, "{:?}", res.optimality);
    assert!(res.dual_sup.upper <= 1.0 + 1e-5);
    assert!(res.cardinality_ok);
    assert_eq!(res.measure.len(), 3);
}

#[test]
fn noisy_fourier_solve_is_optimal() {
    let fc = 32;
    let fam = MeasurementFamily::fourier(fc).unwrap();
    let mu = DiscreteMeasure::new(
        Domain::Circle,
        [(0.1, 400.0, 0.5), (0.3, 200.0, 1.0), (0.55, 90.0, 2.0), (0.8, 30.0, 4.0)],
    )
    .unwrap();
    let y = noisy(fam, &mu, 2.0, 11);
    let res = solve(fam, &y, &SolverConfig::new(fam, 15.0)).unwrap();
    assert!(res.optimality.passed, "{:?}", res.optimality);
    assert!(res.dual_sup.upper <= 1.0 + 1e-5);
    assert!(res.gap <= 1e-6 * (1.0 + res.objective));
}

#[test]
fn oracle_trivial_and_on_grid_cases() {
    let fam = MeasurementFamily::fourier(8).unwrap();
    let g = 32 * fam.size();
    assert!(grid_lasso_oracle(fam, &SampleVector::zeros(fam), 1.0, g - 1, 1e-8).is_err());
    let z = grid_lasso_oracle(fam, &SampleVector::zeros(fam), 1.0, g, 1e-8).unwrap();
    assert!(z.measure.is_empty() && z.objective == 0.0);
    let node = 100.0 / g as f64;
    let mu = DiscreteMeasure::new(Domain::Circle, [(node, 2.0, 0.7)]).unwrap();
    let y = samples(fam, &mu);
    let lambda = 0.3;
    let res = grid_lasso_oracle(fam, &y, lambda, g, 1e-12).unwrap();
    let big: Vec<_> = res.measure.atoms().iter().filter(|a| a.amplitude >= 1e-8).collect();
    assert_eq!(big.len(), 1);
    assert!((big[0].location - node).abs() < 1e-12);
    assert!((big[0].amplitude - (2.0 - lambda / fam.size() as f64)).abs() < 1e-6);
}

#[test]
fn chebyshev_oracle_matches_solver() {
    let fam = MeasurementFamily::chebyshev(12).unwrap();
    let mu = DiscreteMeasure::new(Domain::Interval, [(-0.4, 2.0, 0.0), (0.45, 1.0, 0.0)]).unwrap();
    let y = noisy(fam, &mu, 0.05, 5);
    let lambda = 0.1;
    let res = solve(fam, &y, &SolverConfig::new(fam, lambda)).unwrap();
    let oracle = grid_lasso_oracle(fam, &y, lambda, 64 * fam.size(), 1e-10).unwrap();
    assert!((oracle.objective - res.objective).abs() <= 1e-4 * (1.0 + res.objective));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn tv_non_increasing_in_lambda(seed in 0u64..1000) {
            let fam = MeasurementFamily::fourier(10).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = DiscreteMeasure::new(Domain::Circle, (0..3).map(|j| {
                (0.1 + 0.3 * j as f64 + 0.05 * rng.random::<f64>(), 1.0 + rng.random::<f64>(), 6.0 * rng.random::<f64>())
            })).unwrap();
            let y = noisy(fam, &mu, 0.3, seed);
            let mut prev = f64::INFINITY;
            for lambda in [0.2, 0.5, 1.0, 2.0, 4.0, 8.0] {
                let res = solve(fam, &y, &SolverConfig::new(fam, lambda)).unwrap();
                prop_assert!(res.optimality.passed);
                prop_assert!(res.cardinality_ok);
                prop_assert!(res.dual_sup.upper <= 1.0 + 1e-5);
                let tv = tv_norm(&res.measure);
                prop_assert!(tv <= prev + 1e-6 * (1.0 + prev.min(1e300)));
                prev = tv;
            }
        }
    }
}
