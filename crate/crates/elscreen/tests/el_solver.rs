//! Cross-checks of the dual solver against independent oracles.

mod common;

use common::{bisection_el, TestRng, FROZEN_AEL_RATIO, FROZEN_G, FROZEN_RATIO};
use elscreen::el::{ael_augment, ael_level, el_ratio_at_zero, solve_dual, EstimatingMatrix};
use nalgebra::DMatrix;

fn univariate(g: &[f64]) -> EstimatingMatrix {
    EstimatingMatrix::new(DMatrix::from_column_slice(g.len(), 1, g)).unwrap()
}

#[test]
fn frozen_instance_matches_scipy() {
    let rows: Vec<&[f64]> = FROZEN_G.iter().map(|r| r.as_slice()).collect();
    let g = EstimatingMatrix::from_rows(&rows).unwrap();
    let raw = solve_dual(&g).unwrap();
    assert!(raw.converged);
    assert!(
        (raw.ratio - FROZEN_RATIO).abs() <= 1e-9,
        "raw ratio {} vs frozen {}",
        raw.ratio,
        FROZEN_RATIO
    );
    let adjusted = el_ratio_at_zero(&g).unwrap();
    assert!(
        (adjusted.ratio - FROZEN_AEL_RATIO).abs() <= 1e-9,
        "adjusted ratio {} vs frozen {}",
        adjusted.ratio,
        FROZEN_AEL_RATIO
    );
}

#[test]
fn small_univariate_matches_bisection() {
    let g = [-1.0, 1.0, 2.0];
    let sol = solve_dual(&univariate(&g)).unwrap();
    let oracle = bisection_el(&g);
    assert!(sol.converged);
    assert!((sol.ratio - oracle.ratio).abs() <= 1e-6);
    assert!((sol.multiplier[0] - oracle.alpha).abs() <= 1e-6);
}

#[test]
fn one_sided_augmented_matches_bisection() {
    let g = [1.0, 2.0, 3.0, 4.0];
    let level = ael_level(4);
    let augmented = ael_augment(&univariate(&g), level);
    let sol = solve_dual(&augmented).unwrap();
    let gbar: f64 = g.iter().sum::<f64>() / 4.0;
    let mut augmented_rows = g.to_vec();
    augmented_rows.push(-level * gbar);
    let oracle = bisection_el(&augmented_rows);
    assert!((sol.ratio - oracle.ratio).abs() <= 1e-6);
    assert!((sol.multiplier[0] - oracle.alpha).abs() <= 1e-6);
}

#[test]
fn random_univariate_suite_matches_bisection() {
    let mut rng = TestRng::new(0x51CE5);
    for case in 0..300 {
        let n = 5 + (rng.next_u64() % 40) as usize;
        let mut g: Vec<f64> = (0..n).map(|_| rng.normal() + 0.3 * rng.normal()).collect();
        // Ensure both signs so the raw problem is feasible.
        if g.iter().all(|&v| v > 0.0) {
            g[0] = -g[0].abs() - 0.1;
        }
        if g.iter().all(|&v| v < 0.0) {
            g[0] = g[0].abs() + 0.1;
        }
        let sol = solve_dual(&univariate(&g)).unwrap();
        let oracle = bisection_el(&g);
        assert!(sol.converged, "case {case} failed to converge");
        assert!(
            (sol.ratio - oracle.ratio).abs() <= 1e-6,
            "case {case}: ratio {} vs {}",
            sol.ratio,
            oracle.ratio
        );
        assert!((sol.multiplier[0] - oracle.alpha).abs() <= 1e-6);
        // KKT residual and weight constraints on the converged solve.
        assert!(sol.residual_norm <= 1e-8);
        assert!(sol.weights.min() > 0.0);
        assert!((sol.weights.sum() - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn affine_invariance_smoke() {
    let mut rng = TestRng::new(0xAFF1E);
    for _ in 0..60 {
        let q = 2 + (rng.next_u64() % 7) as usize;
        let n = 20 + (rng.next_u64() % 40) as usize;
        let g = DMatrix::from_fn(n, q, |_, _| rng.normal());
        let a = DMatrix::from_fn(q, q, |_, _| rng.normal());
        if a.clone().lu().determinant().abs() < 1e-3 {
            continue;
        }
        let gm = EstimatingMatrix::new(g.clone()).unwrap();
        let tm = EstimatingMatrix::new(&g * a.transpose()).unwrap();
        let r1 = el_ratio_at_zero(&gm).unwrap();
        let r2 = el_ratio_at_zero(&tm).unwrap();
        assert!(
            (r1.ratio - r2.ratio).abs() <= 1e-6 * (1.0 + r1.ratio.abs()),
            "affine transform changed the ratio: {} vs {}",
            r1.ratio,
            r2.ratio
        );
    }
}

#[test]
fn nonnegativity_and_zero_characterization() {
    let mut rng = TestRng::new(0xBEEF);
    for _ in 0..200 {
        let q = 1 + (rng.next_u64() % 4) as usize;
        let n = 10 + (rng.next_u64() % 30) as usize;
        let g = DMatrix::from_fn(n, q, |_, _| rng.normal());
        let gm = EstimatingMatrix::new(g).unwrap();
        let sol = el_ratio_at_zero(&gm).unwrap();
        assert!(sol.ratio >= -1e-12, "negative ratio {}", sol.ratio);
        let mean_norm = ael_augment(&gm, ael_level(n)).column_means().amax();
        if sol.ratio <= 1e-8 {
            assert!(mean_norm <= 1e-4, "tiny ratio with mean norm {mean_norm}");
        }
        if mean_norm <= 1e-12 {
            assert!(sol.ratio <= 1e-8);
        }
    }
}

#[test]
fn monster_scale_columns_still_converge() {
    // Column scales around 1e6 exercise the relative tolerance path.
    let mut rng = TestRng::new(0x5CA1E);
    for _ in 0..50 {
        let n = 30;
        let g = DMatrix::from_fn(n, 2, |_, c| rng.normal() * if c == 0 { 1e6 } else { 1e-3 });
        let gm = EstimatingMatrix::new(g).unwrap();
        let sol = el_ratio_at_zero(&gm).unwrap();
        assert!(sol.converged);
        assert!(sol.ratio.is_finite() && sol.ratio >= 0.0);
    }
}
