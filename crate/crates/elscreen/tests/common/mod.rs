//! Shared test utilities: independent oracles the library code never touches.
//!
//! Everything here is deliberately written against the mathematical
//! definitions rather than the library's own solver paths, so the two can
//! cross-check each other.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Solution of the univariate empirical-likelihood problem found by bisection.
pub struct BisectionSolution {
    pub alpha: f64,
    pub ratio: f64,
    pub weights: Vec<f64>,
}

/// Solve the q = 1 score equation sum_i g_i / (1 + a g_i) = 0 by bisection.
///
/// Requires rows on both sides of zero (zero strictly inside the hull); the
/// score is strictly decreasing on the feasible interval
/// (-1/max g, -1/min g) and runs from +inf to -inf, so the root is unique.
pub fn bisection_el(g: &[f64]) -> BisectionSolution {
    let n = g.len() as f64;
    let gmax = g.iter().cloned().fold(f64::MIN, f64::max);
    let gmin = g.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        gmax > 0.0 && gmin < 0.0,
        "bisection oracle needs zero strictly inside the hull"
    );
    let score = |a: f64| -> f64 { g.iter().map(|&gi| gi / (1.0 + a * gi)).sum() };
    // Shrink the open feasible interval slightly so every z_i stays positive.
    let mut lo = -1.0 / gmax;
    let mut hi = -1.0 / gmin;
    let width = hi - lo;
    lo += 1e-14 * width;
    hi -= 1e-14 * width;
    assert!(score(lo) > 0.0 && score(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let ratio = 2.0 * g.iter().map(|&gi| (1.0 + alpha * gi).ln()).sum::<f64>();
    let weights = g
        .iter()
        .map(|&gi| 1.0 / (n * (1.0 + alpha * gi)))
        .collect();
    BisectionSolution {
        alpha,
        ratio,
        weights,
    }
}

/// Ordinary least squares via normal equations (independent of the
/// coordinate-descent path it is used to check).
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    xtx.lu().solve(&xty).expect("singular design in OLS oracle")
}

/// Deterministic xorshift-based generator for oracle test instances, kept
/// separate from the library's seeding scheme on purpose.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform on (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u = self.uniform();
        let v = self.uniform();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}

/// Fixed 6×2 estimating matrix used for frozen-value checks.
pub const FROZEN_G: [[f64; 2]; 6] = [
    [0.8, -0.3],
    [-0.5, 0.9],
    [1.2, 0.4],
    [-0.9, -0.6],
    [0.3, -1.1],
    [-0.4, 0.5],
];

/// Ratio of the raw dual solve on `FROZEN_G`, computed independently with a
/// Nelder-Mead + Newton polish in SciPy.
pub const FROZEN_RATIO: f64 = 0.0856772418120407;

/// Ratio of the adjusted solve on `FROZEN_G` (level 1), same provenance.
pub const FROZEN_AEL_RATIO: f64 = 0.059200623366269606;
