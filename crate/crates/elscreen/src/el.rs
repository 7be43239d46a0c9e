//! Empirical-likelihood ratio solver.
//!
//! For an n×q matrix G whose rows g_i are estimating-function values, the
//! log empirical-likelihood ratio for testing E g = 0 is
//!
//! ```text
//! l(0) = 2 max_a sum_i log(1 + a' g_i),
//! ```
//!
//! attained where the score equation `sum_i g_i / (1 + a' g_i) = 0` holds.
//! The probability weights at the optimum are `w_i = 1 / (n (1 + a' g_i))`.
//!
//! The maximization runs a damped Newton iteration on the concave dual with
//! Owen's safeguarded logarithm: below the barrier `1 + a' g_i <= 1/n` the
//! log is replaced by its second-order Taylor extension, which keeps the
//! objective finite and concave everywhere while leaving the solution
//! untouched (every feasible optimum has all weights below one, hence every
//! `1 + a' g_i` above `1/n`).
//!
//! Hull infeasibility (zero outside the convex hull of the rows, so the dual
//! diverges) is accommodated by the adjusted empirical likelihood of Chen,
//! Variyath and Abraham: [`ael_augment`] appends the pseudo-row `-a_n gbar`,
//! which places zero inside the hull by construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sup-norm tolerance on the score-equation residual.
pub const SCORE_TOLERANCE: f64 = 1e-8;

/// Newton iteration cap.
pub const MAX_ITERATIONS: usize = 100;

/// Relative ridge added to the Newton system when it is singular.
pub const HESSIAN_RIDGE: f64 = 1e-10;

/// Multiplier norm beyond which the dual is declared divergent.
const DIVERGENCE_BOUND: f64 = 1e10;

/// Validated n×q matrix of estimating-function rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatingMatrix {
    rows: DMatrix<f64>,
}

impl EstimatingMatrix {
    /// Wraps an n×q matrix of rows g_i. Requires n >= 2, q >= 1 and all
    /// entries finite.
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "estimating matrix needs at least 2 rows, got {}",
                rows.nrows()
            )));
        }
        if rows.ncols() < 1 {
            return Err(Error::InvalidInput(
                "estimating matrix needs at least 1 column".into(),
            ));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "estimating matrix contains a non-finite entry".into(),
            ));
        }
        Ok(EstimatingMatrix { rows })
    }

    /// Builds the matrix from row slices (convenience for tests and FFI).
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("no rows supplied".into()));
        }
        let q = rows[0].len();
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::DimensionMismatch(
                "estimating rows have unequal lengths".into(),
            ));
        }
        let mat = DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j]);
        Self::new(mat)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    /// Dimension q of the estimating function.
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Column means gbar.
    pub fn column_means(&self) -> DVector<f64> {
        let n = self.rows.nrows() as f64;
        DVector::from_fn(self.rows.ncols(), |j, _| self.rows.column(j).sum() / n)
    }
}

/// Adjustment level a_n = max(1, log(n)/2) for the pseudo-row.
pub fn ael_level(n_rows: usize) -> f64 {
    ((n_rows as f64).ln() / 2.0).max(1.0)
}

/// Appends the adjustment pseudo-row `-level * gbar` to G.
///
/// Zero is then a strict convex combination of the augmented rows (weight
/// `1/(1+level)` on the pseudo-row, uniform elsewhere), so the augmented
/// problem always has a solution.
pub fn ael_augment(g: &EstimatingMatrix, level: f64) -> EstimatingMatrix {
    let (n, q) = (g.n_rows(), g.dim());
    let gbar = g.column_means();
    let mut rows = DMatrix::zeros(n + 1, q);
    rows.view_mut((0, 0), (n, q)).copy_from(&g.rows);
    for j in 0..q {
        rows[(n, j)] = -level * gbar[j];
    }
    EstimatingMatrix { rows }
}

/// Outcome of a dual solve.
#[derive(Debug, Clone)]
pub struct ElSolution {
    /// Log empirical-likelihood ratio 2 sum_i log(1 + a' g_i).
    pub ratio: f64,
    /// Lagrange multiplier a (length q).
    pub multiplier: DVector<f64>,
    /// Probability weights w_i (length n, normalized to sum one when the
    /// solve converged).
    pub weights: DVector<f64>,
    /// Newton iterations consumed.
    pub iterations: usize,
    /// Whether the score residual met [`SCORE_TOLERANCE`].
    pub converged: bool,
    /// Final sup-norm of the score-equation residual.
    pub residual_norm: f64,
}

/// Safeguarded logarithm value, first and second derivative at z.
///
/// For z >= eps this is the plain logarithm; below eps it is the quadratic
/// extension matching value and two derivatives at eps, keeping the dual
/// finite and strictly concave on all of R.
#[inline]
fn log_star(z: f64, eps: f64) -> (f64, f64, f64) {
    if z >= eps {
        (z.ln(), 1.0 / z, -1.0 / (z * z))
    } else {
        let e1 = 1.0 / eps;
        (
            eps.ln() - 1.5 + 2.0 * e1 * z - 0.5 * e1 * e1 * z * z,
            2.0 * e1 - e1 * e1 * z,
            -e1 * e1,
        )
    }
}

/// Maximizes the safeguarded dual for G and returns the solution.
///
/// The solve is affine-equivariant: internally each column is equilibrated
/// by its root-mean-square before iterating, and the multiplier is mapped
/// back, so heavy-tailed inputs do not distort the convergence test. The
/// score tolerance is absolute (1e-8) for ordinarily scaled inputs and
/// degrades to a 1e-12 relative test only when column scales exceed 1e4.
///
/// Errors with [`Error::HullViolation`] when the dual diverges (zero outside
/// the convex hull of the rows) and [`Error::NumericalFailure`] when the
/// Newton system stays singular beyond ridge repair.
pub fn solve_dual(g: &EstimatingMatrix) -> Result<ElSolution> {
    let n = g.n_rows();
    let q = g.dim();
    let nf = n as f64;
    let eps = 1.0 / nf;

    // Column equilibration: work on G D with D = diag(1/s_c).
    let mut scale = DVector::from_element(q, 1.0);
    for c in 0..q {
        let rms = (g.rows.column(c).norm_squared() / nf).sqrt();
        if rms > 1e-300 {
            scale[c] = rms;
        }
    }
    let mut gs = g.rows.clone();
    for c in 0..q {
        let s = scale[c];
        gs.column_mut(c).iter_mut().for_each(|v| *v /= s);
    }
    let smax = scale.max();
    let tol = SCORE_TOLERANCE.max(1e-12 * smax);

    let mut alpha = DVector::zeros(q);
    let mut z = DVector::from_element(n, 1.0);
    let mut phi1 = DVector::zeros(n);
    let mut phi2 = DVector::zeros(n);
    let mut grad = DVector::zeros(q);
    let mut weighted = DMatrix::zeros(n, q);

    let eval = |alpha: &DVector<f64>,
                z: &mut DVector<f64>,
                phi1: &mut DVector<f64>,
                phi2: &mut DVector<f64>|
     -> f64 {
        z.gemv(1.0, &gs, alpha, 0.0);
        let mut obj = 0.0;
        for i in 0..n {
            z[i] += 1.0;
            let (v, d1, d2) = log_star(z[i], eps);
            obj += v;
            phi1[i] = d1;
            phi2[i] = d2;
        }
        obj
    };

    let mut objective = eval(&alpha, &mut z, &mut phi1, &mut phi2);

    for it in 0..MAX_ITERATIONS {
        // True score (on the equilibrated columns) and convergence test.
        let mut residual = 0.0;
        let feasible = z.min() > 0.0;
        if feasible {
            grad.fill(0.0);
            for c in 0..q {
                let col = gs.column(c);
                let mut s = 0.0;
                for i in 0..n {
                    s += col[i] / z[i];
                }
                grad[c] = s;
            }
            residual = grad.amax();
            // Guard against the false root at diverging alpha, where the
            // score also vanishes: a genuine solution has sum 1/z = n.
            let wsum: f64 = z.iter().map(|&zi| 1.0 / zi).sum::<f64>() / nf;
            if residual <= tol && (wsum - 1.0).abs() <= 1e-6 {
                let mut weights = DVector::from_fn(n, |i, _| 1.0 / (nf * z[i]));
                let total = weights.sum();
                weights /= total;
                let ratio = 2.0 * z.iter().map(|&zi| zi.ln()).sum::<f64>();
                let mut multiplier = alpha.clone();
                for c in 0..q {
                    multiplier[c] /= scale[c];
                }
                return Ok(ElSolution {
                    ratio,
                    multiplier,
                    weights,
                    iterations: it,
                    converged: true,
                    residual_norm: residual,
                });
            }
        }

        // Newton direction on the safeguarded dual.
        for i in 0..n {
            let w = -phi2[i];
            for c in 0..q {
                weighted[(i, c)] = w * gs[(i, c)];
            }
        }
        let mut hess = DMatrix::zeros(q, q);
        hess.gemm_tr(1.0, &weighted, &gs, 0.0);
        grad.gemv_tr(1.0, &gs, &phi1, 0.0);

        let mut ridge = HESSIAN_RIDGE * hess.trace().max(f64::MIN_POSITIVE);
        let direction = loop {
            if let Some(chol) = hess.clone().cholesky() {
                break chol.solve(&grad);
            }
            if ridge > 1e6 * hess.trace().abs() + 1.0 {
                return Err(Error::NumericalFailure(
                    "Newton system singular beyond ridge repair".into(),
                ));
            }
            for c in 0..q {
                hess[(c, c)] += ridge;
            }
            ridge *= 10.0;
        };
        if direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(
                "non-finite Newton direction".into(),
            ));
        }

        // Backtracking line search: the dual is concave, so the Newton
        // direction ascends; halve until the objective stops decreasing.
        // Near the optimum the true increase per step falls below the
        // objective's floating-point resolution, so tolerate an ulp-scale
        // decrease rather than rejecting the pure-Newton endgame.
        let slack = 1e-12 * (1.0 + objective.abs());
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..50 {
            let trial = &alpha + step * &direction;
            let obj = eval(&trial, &mut z, &mut phi1, &mut phi2);
            if obj >= objective - slack {
                alpha = trial;
                objective = obj.max(objective);
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            // Stalled at the numerical optimum without meeting the score
            // tolerance; restore state at alpha and report non-convergence.
            eval(&alpha, &mut z, &mut phi1, &mut phi2);
            return Ok(partial_solution(&alpha, &scale, &z, it, residual, nf));
        }

        if alpha.norm() > DIVERGENCE_BOUND {
            return Err(Error::HullViolation);
        }
    }

    eval(&alpha, &mut z, &mut phi1, &mut phi2);
    let residual = if z.min() > 0.0 {
        (0..q)
            .map(|c| {
                (0..n)
                    .map(|i| gs[(i, c)] / z[i])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(partial_solution(
        &alpha,
        &scale,
        &z,
        MAX_ITERATIONS,
        residual,
        nf,
    ))
}

/// Assembles a non-converged solution snapshot.
fn partial_solution(
    alpha: &DVector<f64>,
    scale: &DVector<f64>,
    z: &DVector<f64>,
    iterations: usize,
    residual: f64,
    nf: f64,
) -> ElSolution {
    let n = z.len();
    let mut weights = DVector::from_fn(n, |i, _| 1.0 / (nf * z[i]));
    if z.min() > 0.0 {
        let total = weights.sum();
        if total > 0.5 {
            weights /= total;
        }
    }
    let ratio = if z.min() > 0.0 {
        2.0 * z.iter().map(|&zi| zi.ln()).sum::<f64>()
    } else {
        f64::NAN
    };
    let mut multiplier = alpha.clone();
    for c in 0..multiplier.len() {
        multiplier[c] /= scale[c];
    }
    ElSolution {
        ratio,
        multiplier,
        weights,
        iterations,
        converged: false,
        residual_norm: residual,
    }
}

/// Canonical marginal-utility statistic: adjusted empirical-likelihood
/// ratio at zero.
///
/// Augments G with the pseudo-row at level a_n = max(1, log(n)/2) and solves
/// the dual on the augmented matrix; the returned ratio sums over all n+1
/// rows. Hull violations cannot occur after augmentation, so any error is a
/// genuine numerical failure.
pub fn el_ratio_at_zero(g: &EstimatingMatrix) -> Result<ElSolution> {
    let augmented = ael_augment(g, ael_level(g.n_rows()));
    match solve_dual(&augmented) {
        Ok(sol) => Ok(sol),
        Err(Error::HullViolation) => Err(Error::NumericalFailure(
            "adjusted dual diverged unexpectedly".into(),
        )),
        Err(e) => Err(e),
    }
}
