//! Empirical moments of the scenario generators against the model
//! equations they implement.

use elscreen::dataset::Dataset;
use elscreen::simgen::{
    self, derive_seed, generate, mvn_sample, ErrorCase, SimulationScenario,
};
use nalgebra::DMatrix;

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let ma = mean(a.iter().copied(), n);
    let mb = mean(b.iter().copied(), n);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1) as f64
}

fn sample_corr(a: &[f64], b: &[f64]) -> f64 {
    sample_cov(a, b) / (sample_cov(a, a) * sample_cov(b, b)).sqrt()
}

fn column(data: &Dataset, which: char, j: usize) -> Vec<f64> {
    let m = if which == 'x' { data.x() } else { data.y() };
    m.column(j).iter().copied().collect()
}

#[test]
fn ex41_case_a_covariances_match_the_coefficients() {
    let scenario = SimulationScenario::ex41(40_000, 6, 0.0, ErrorCase::A, 17).unwrap();
    let data = generate(&scenario).unwrap();
    // (predictor, response, coefficient) straight from the model equations.
    let expected = [
        (0, 0, 3.0),
        (1, 0, 2.0),
        (0, 1, 4.0),
        (2, 1, 1.0),
        (1, 2, 2.0),
        (3, 2, 4.0),
        (3, 3, 3.0),
        (4, 3, 1.0),
        (5, 0, 0.0), // an inactive predictor stays flat
        (2, 0, 0.0),
    ];
    for (j, k, coef) in expected {
        let c = sample_cov(&column(&data, 'x', j), &column(&data, 'y', k));
        assert!(
            (c - coef).abs() <= 0.1,
            "cov(x{j}, y{k}) = {c}, expected {coef}"
        );
    }
}

#[test]
fn ex41_noise_correlation_tracks_rho() {
    for (rho, tol) in [(0.0, 0.03), (0.8, 0.03)] {
        let scenario = SimulationScenario::ex41(20_000, 6, rho, ErrorCase::A, 23).unwrap();
        let data = generate(&scenario).unwrap();
        let x = data.x();
        let y = data.y();
        // Residuals recovered with the known coefficient matrix.
        let eps0: Vec<f64> = (0..data.n())
            .map(|i| y[(i, 0)] - 3.0 * x[(i, 0)] - 2.0 * x[(i, 1)])
            .collect();
        let eps1: Vec<f64> = (0..data.n())
            .map(|i| y[(i, 1)] - 4.0 * x[(i, 0)] - x[(i, 2)])
            .collect();
        let corr = sample_corr(&eps0, &eps1);
        assert!(
            (corr - rho).abs() <= tol,
            "noise correlation {corr} at rho = {rho}"
        );
    }
}

#[test]
fn case1_keeps_the_third_predictor_marginally_invisible() {
    let scenario = SimulationScenario::case1(100_000, 4, 5).unwrap();
    let data = generate(&scenario).unwrap();
    let x3 = column(&data, 'x', 2);
    for k in 0..2 {
        let c = sample_cov(&x3, &column(&data, 'y', k));
        assert!(
            c.abs() <= 0.03,
            "E[x3 y{k}] should cancel at rho = 0.9, got {c}"
        );
    }
    // The predictor is nonetheless active: conditioning on the first two
    // columns leaves a strong partial signal, visible through the explicit
    // coefficient -9 on response 2.
    let c2 = sample_cov(&x3, &column(&data, 'x', 0));
    assert!((c2 - 0.9).abs() <= 0.03, "equicorrelation drifted: {c2}");
}

#[test]
fn ex43_isolates_the_fifth_predictor() {
    let scenario = SimulationScenario::ex43(50_000, 7, 0.0, ErrorCase::A, 9).unwrap();
    let data = generate(&scenario).unwrap();
    let x5 = column(&data, 'x', 4);
    for j in 0..7 {
        let c = sample_cov(&x5, &column(&data, 'x', j));
        let expected = if j == 4 { 1.0 } else { 0.0 };
        assert!(
            (c - expected).abs() <= 0.05,
            "cov(x5, x{j}) = {c}, expected {expected}"
        );
    }
    // All other pairs share the 0.5 equicorrelation.
    let c01 = sample_cov(&column(&data, 'x', 0), &column(&data, 'x', 6));
    assert!((c01 - 0.5).abs() <= 0.05, "cov(x1, x7) = {c01}");
    // X5 enters only the third response (coefficient 1).
    let c_y3 = sample_cov(&x5, &column(&data, 'y', 2));
    assert!((c_y3 - 1.0).abs() <= 0.1);
    let c_y1 = sample_cov(&x5, &column(&data, 'y', 0));
    assert!(c_y1.abs() <= 0.1);
}

#[test]
fn varied_q_responses_accumulate_the_leading_predictors() {
    let scenario = SimulationScenario::varied_q(50_000, 6, 3, 31).unwrap();
    let data = generate(&scenario).unwrap();
    for k in 0..3 {
        for j in 0..6 {
            let c = sample_cov(&column(&data, 'x', j), &column(&data, 'y', k));
            let expected = if j <= k { 1.0 } else { 0.0 };
            assert!(
                (c - expected).abs() <= 0.05,
                "cov(x{j}, y{k}) = {c}, expected {expected}"
            );
        }
    }
}

#[test]
fn mvn_sample_reproduces_the_requested_covariance() {
    let n = 50_000;
    let identity = DMatrix::<f64>::identity(3, 3);
    let z = mvn_sample(&identity, n, 3).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            let c = sample_cov(
                &z.column(a).iter().copied().collect::<Vec<_>>(),
                &z.column(b).iter().copied().collect::<Vec<_>>(),
            );
            let expected = if a == b { 1.0 } else { 0.0 };
            assert!((c - expected).abs() <= 0.05, "cov[{a},{b}] = {c}");
        }
    }

    let equi = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.9 });
    let z = mvn_sample(&equi, n, 4).unwrap();
    let c = sample_cov(
        &z.column(0).iter().copied().collect::<Vec<_>>(),
        &z.column(3).iter().copied().collect::<Vec<_>>(),
    );
    assert!((c - 0.9).abs() <= 0.05, "equicorrelated draw gave {c}");
}

#[test]
fn every_model_and_case_generates_cleanly() {
    let scenarios = [
        SimulationScenario::varied_q(50, 30, 4, 1).unwrap(),
        SimulationScenario::ex41(50, 30, 0.5, ErrorCase::A, 2).unwrap(),
        SimulationScenario::ex41(50, 30, 0.5, ErrorCase::B, 3).unwrap(),
        SimulationScenario::ex42(50, 30, 0.5, ErrorCase::A, 4).unwrap(),
        SimulationScenario::ex42(50, 30, 0.5, ErrorCase::B, 5).unwrap(),
        SimulationScenario::ex43(50, 30, 0.5, ErrorCase::A, 6).unwrap(),
        SimulationScenario::ex43(50, 30, 0.5, ErrorCase::B, 7).unwrap(),
        SimulationScenario::case1(50, 30, 8).unwrap(),
    ];
    for scenario in scenarios {
        let data = generate(&scenario).unwrap();
        assert_eq!(data.n(), 50);
        assert_eq!(data.p(), 30);
        assert_eq!(data.q(), scenario.q);
        assert!(data.x().iter().all(|v| v.is_finite()));
        assert!(data.y().iter().all(|v| v.is_finite()));
        assert!(scenario.active_set().iter().all(|&j| j < 30));
    }
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let scenario = SimulationScenario::ex43(40, 20, 0.5, ErrorCase::B, 77).unwrap();
    let a = generate(&scenario).unwrap();
    let b = generate(&scenario).unwrap();
    assert_eq!(a.x(), b.x());
    assert_eq!(a.y(), b.y());

    let mut other = scenario.clone();
    other.seed = 78;
    let c = generate(&other).unwrap();
    assert_ne!(a.x(), c.x());
}

#[test]
fn derived_seeds_do_not_collide_over_a_study() {
    let mut seen = std::collections::HashSet::new();
    for master in [0u64, 7, u64::MAX] {
        for index in 0..2_000u64 {
            assert!(
                seen.insert(derive_seed(master, index)),
                "seed collision at master {master}, index {index}"
            );
        }
    }
}

#[test]
fn simgen_active_sets_match_the_model_equations() {
    let varied = SimulationScenario::varied_q(50, 30, 4, 0).unwrap();
    assert_eq!(varied.active_set(), vec![0, 1, 2, 3]);
    let ex41 = SimulationScenario::ex41(50, 30, 0.0, ErrorCase::A, 0).unwrap();
    assert_eq!(ex41.active_set(), vec![0, 1, 2, 3, 4]);
    let case1 = SimulationScenario::case1(50, 30, 0).unwrap();
    assert_eq!(case1.active_set(), vec![0, 1, 2]);
    let inactive = ex41.inactive_set();
    assert_eq!(inactive.len(), 25);
    assert!(inactive.iter().all(|j| !ex41.active_set().contains(j)));
    let _ = simgen::generate(&varied).unwrap();
}
