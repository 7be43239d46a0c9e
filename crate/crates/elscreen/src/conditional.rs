//! Conditional screening: sliced-inverse-regression estimation of the
//! conditioning directions, linear centralization of each target predictor,
//! and the conditional EL statistic with its two-step and sequential
//! drivers.
//!
//! For a conditioning set C and target j outside C, the moment rows become
//! g_ij = (X_ij - Ê(X_j | B̂' X_C)) * y_i, where B̂ spans the directions
//! recovered by SIR with x_j as the working response. Directions are
//! re-estimated per target by default (the conditioning geometry genuinely
//! depends on j); `shared_basis` switches to conditioning on all of X_C
//! through the identity basis, which is exact under the linearity
//! condition and cheaper for very large p.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::el::{el_ratio_at_zero, EstimatingMatrix};
use crate::error::{Error, Result};
use crate::screening::{melsis_statistics, rank_predictors, ScreeningResult, SoftThreshold};
use crate::screening::{Method, ThresholdRecord};

/// Tuning knobs for the conditional screen.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConditioningConfig {
    /// Number of SIR slices (reduced automatically when the target has
    /// fewer distinct values).
    pub n_slices: usize,
    /// Keep the leading directions whose eigenvalue share reaches this
    /// fraction; 1.0 keeps every direction with a nonzero eigenvalue.
    pub direction_share: f64,
    /// Condition on the full X_C block (identity basis) instead of
    /// per-target SIR directions.
    pub shared_basis: bool,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        ConditioningConfig {
            n_slices: 9,
            direction_share: 0.8,
            shared_basis: false,
        }
    }
}

/// A conditioning request: the set C plus the estimation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditioningSpec {
    /// Conditioning predictor indices (0-based, ascending).
    pub cond_set: Vec<usize>,
    pub config: ConditioningConfig,
}

impl ConditioningSpec {
    pub fn new(cond_set: Vec<usize>) -> Self {
        ConditioningSpec::with_config(cond_set, ConditioningConfig::default())
    }

    pub fn with_config(mut cond_set: Vec<usize>, config: ConditioningConfig) -> Self {
        cond_set.sort_unstable();
        ConditioningSpec { cond_set, config }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.cond_set.is_empty() {
            return Err(Error::InvalidInput("conditioning set is empty".into()));
        }
        if self.cond_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "conditioning set must be strictly increasing".into(),
            ));
        }
        if *self.cond_set.last().unwrap() >= p {
            return Err(Error::InvalidInput(format!(
                "conditioning index {} out of range for {} predictors",
                self.cond_set.last().unwrap(),
                p
            )));
        }
        if self.cond_set.len() >= p {
            return Err(Error::InvalidInput(
                "conditioning set leaves no targets to screen".into(),
            ));
        }
        if self.config.n_slices < 2 {
            return Err(Error::InvalidInput("need at least two slices".into()));
        }
        if !(self.config.direction_share > 0.0 && self.config.direction_share <= 1.0) {
            return Err(Error::InvalidInput(
                "direction share must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one SIR direction estimation.
#[derive(Debug, Clone)]
pub struct SirOutcome {
    /// |C| x b matrix with orthonormal columns (within 1e-8), leading
    /// direction first, sign fixed so the largest-magnitude entry of each
    /// column is positive.
    pub directions: DMatrix<f64>,
    /// Between-slice eigenvalues, descending, one per kept direction.
    pub eigenvalues: Vec<f64>,
    /// Slice count actually used after the distinct-value fallback.
    pub slices_used: usize,
}

const SIR_RIDGE: f64 = 1e-8;
const RANK_TOLERANCE: f64 = 1e-12;

/// Estimates the conditioning directions by sliced inverse regression of
/// `xc` on the working response `xj`.
///
/// Observations are sliced by the empirical quantiles of `xj` (sizes
/// differing by at most one, ties broken by stable observation order). The
/// between-slice covariance of the whitened slice means is
/// eigendecomposed and the leading directions covering `share` of the
/// eigenvalue mass are returned in original coordinates.
///
/// When `xj` has fewer distinct values than `n_slices`, the slice count
/// falls back to the number of distinct values (minimum two); a constant
/// target is rejected.
pub fn sir_directions(
    xc: &DMatrix<f64>,
    xj: &DVector<f64>,
    n_slices: usize,
    share: f64,
) -> Result<SirOutcome> {
    let n = xc.nrows();
    let c = xc.ncols();
    if n != xj.len() {
        return Err(Error::DimensionMismatch(
            "conditioning block and target must have equal length".into(),
        ));
    }
    if c == 0 {
        return Err(Error::InvalidInput("conditioning block is empty".into()));
    }
    if n_slices < 2 {
        return Err(Error::InvalidInput("need at least two slices".into()));
    }
    if n < 2 * n_slices {
        return Err(Error::InvalidInput(format!(
            "need at least {} observations for {} slices",
            2 * n_slices,
            n_slices
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xj[a].total_cmp(&xj[b]).then(a.cmp(&b)));
    let distinct = {
        let mut sorted: Vec<f64> = xj.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        1 + sorted.windows(2).filter(|w| w[0] != w[1]).count()
    };
    if distinct < 2 {
        return Err(Error::InvalidInput(
            "target is constant and cannot be sliced".into(),
        ));
    }
    let slices_used = n_slices.min(distinct);

    // Center and whiten the conditioning block.
    let means = DVector::from_fn(c, |k, _| xc.column(k).sum() / n as f64);
    let centered = DMatrix::from_fn(n, c, |i, k| xc[(i, k)] - means[k]);
    let cov = centered.transpose() * &centered / n as f64;
    let whitener = inverse_sqrt_psd(&cov);
    let white = &centered * &whitener;

    // Slice means of the whitened block, weighted between-slice covariance.
    let mut slice_means = Vec::with_capacity(slices_used);
    let mut weights = Vec::with_capacity(slices_used);
    for h in 0..slices_used {
        let lo = h * n / slices_used;
        let hi = (h + 1) * n / slices_used;
        let mut mean = DVector::zeros(c);
        for &i in &order[lo..hi] {
            mean += white.row(i).transpose();
        }
        mean /= (hi - lo) as f64;
        slice_means.push(mean);
        weights.push((hi - lo) as f64 / n as f64);
    }
    let grand: DVector<f64> = slice_means
        .iter()
        .zip(&weights)
        .fold(DVector::zeros(c), |acc, (m, &w)| acc + m * w);
    let mut between = DMatrix::zeros(c, c);
    for (m, &w) in slice_means.iter().zip(&weights) {
        let d = m - &grand;
        between += w * &d * d.transpose();
    }

    // Leading eigenvectors by share of the eigenvalue mass.
    let eig = SymmetricEigen::new((&between + between.transpose()) / 2.0);
    let mut idx: Vec<usize> = (0..c).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = idx.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let cap = c.min(slices_used - 1).max(1);
    let b = if total <= 0.0 {
        1
    } else if share >= 1.0 {
        values
            .iter()
            .filter(|&&l| l > RANK_TOLERANCE * values[0])
            .count()
            .max(1)
    } else {
        let mut acc = 0.0;
        let mut count = values.len();
        for (k, &l) in values.iter().enumerate() {
            acc += l;
            if acc >= share * total {
                count = k + 1;
                break;
            }
        }
        count
    }
    .min(cap);

    // Back-transform to original coordinates, re-orthonormalize, fix signs.
    let mut raw = DMatrix::zeros(c, b);
    for (col, &k) in idx.iter().take(b).enumerate() {
        let beta = &whitener * eig.eigenvectors.column(k);
        raw.column_mut(col).copy_from(&beta);
    }
    let q = raw.qr().q();
    let mut directions = q.columns(0, b).into_owned();
    for mut col in directions.column_iter_mut() {
        let lead = col.iter().cloned().fold(0.0f64, |a, v| {
            if v.abs() > a.abs() {
                v
            } else {
                a
            }
        });
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    Ok(SirOutcome {
        directions,
        eigenvalues: values[..b].to_vec(),
        slices_used,
    })
}

/// Symmetric inverse square root of a PSD matrix with relative ridge.
fn inverse_sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) / 2.0);
    let ridge = SIR_RIDGE * eig.eigenvalues.iter().sum::<f64>().abs().max(f64::MIN_POSITIVE);
    let inv = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&l| 1.0 / (l.max(0.0) + ridge).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Fitted linear conditional expectation of one target on the projected
/// conditioning block Z = X_C B̂.
#[derive(Debug, Clone)]
pub struct ConditionalFit {
    /// Regression coefficients of the target on the centered projections.
    pub coeffs: DVector<f64>,
    /// Fitted intercept (the target mean under centered projections).
    pub intercept: f64,
    /// Centralized target x̃_j = x_j - fitted.
    pub residual: DVector<f64>,
}

/// Least-squares fit of `xj` on Z = `xc * directions` with an intercept:
/// coeffs = ĉov(Z)^{-1} ĉov(Z, x_j), singular ĉov(Z) repaired by a ridge
/// of 1e-8 times its trace. The residual has sample covariance ≤ 1e-8
/// with every column of Z.
pub fn conditional_expectation_fit(
    xc: &DMatrix<f64>,
    directions: &DMatrix<f64>,
    xj: &DVector<f64>,
) -> Result<ConditionalFit> {
    let n = xc.nrows();
    if xj.len() != n {
        return Err(Error::DimensionMismatch(
            "target length must match the conditioning block".into(),
        ));
    }
    if directions.nrows() != xc.ncols() {
        return Err(Error::DimensionMismatch(
            "directions must have one row per conditioning column".into(),
        ));
    }
    let z = xc * directions;
    let b = z.ncols();
    let z_mean = DVector::from_fn(b, |k, _| z.column(k).sum() / n as f64);
    let zc = DMatrix::from_fn(n, b, |i, k| z[(i, k)] - z_mean[k]);
    let x_mean = xj.sum() / n as f64;
    let cov_zz = zc.transpose() * &zc / n as f64;
    let cov_zx = zc.transpose() * DVector::from_fn(n, |i, _| xj[i] - x_mean) / n as f64;
    let coeffs = match cov_zz.clone().cholesky() {
        Some(chol) => chol.solve(&cov_zx),
        None => {
            let mut ridged = cov_zz;
            let ridge = SIR_RIDGE * ridged.trace().max(f64::MIN_POSITIVE);
            for k in 0..b {
                ridged[(k, k)] += ridge;
            }
            ridged
                .cholesky()
                .ok_or_else(|| {
                    Error::NumericalFailure(
                        "projected conditioning covariance is singular beyond ridge repair".into(),
                    )
                })?
                .solve(&cov_zx)
        }
    };
    let fitted_centered = &zc * &coeffs;
    let residual = DVector::from_fn(n, |i, _| xj[i] - x_mean - fitted_centered[i]);
    Ok(ConditionalFit {
        coeffs,
        intercept: x_mean,
        residual,
    })
}

/// Conditional screening statistics over the targets D = complement of C.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalScreen {
    pub spec: ConditioningSpec,
    /// Target predictor indices (ascending); never intersects `spec.cond_set`.
    pub targets: Vec<usize>,
    /// Conditional EL statistic per target, aligned with `targets`.
    pub statistics: Vec<f64>,
    /// Original indices whose centralization or solve failed (statistic 0).
    pub failures: Vec<usize>,
}

impl ConditionalScreen {
    /// Original indices ordered by decreasing statistic, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let order = rank_predictors(&self.statistics);
        order.into_iter().map(|k| self.targets[k]).collect()
    }

    /// Highest-statistic target (ties broken by smaller index).
    pub fn best_target(&self) -> Option<usize> {
        self.ranking().first().copied()
    }
}

/// Centralizes every target against the conditioning block and returns the
/// residual matrix (one column per target, aligned with the returned
/// target list). Failed targets yield a zero column plus a failure mark.
fn residual_matrix(
    data: &Dataset,
    spec: &ConditioningSpec,
) -> Result<(Vec<usize>, DMatrix<f64>, Vec<usize>)> {
    spec.validate(data.p())?;
    let n = data.n();
    if !spec.config.shared_basis && n < 2 * spec.config.n_slices {
        return Err(Error::InvalidInput(format!(
            "need at least {} observations for {} slices",
            2 * spec.config.n_slices,
            spec.config.n_slices
        )));
    }
    let x = data.x();
    let cond = &spec.cond_set;
    let targets: Vec<usize> = (0..data.p()).filter(|j| !cond.contains(j)).collect();
    let xc = DMatrix::from_fn(n, cond.len(), |i, k| x[(i, cond[k])]);
    let shared = if spec.config.shared_basis {
        Some(DMatrix::identity(cond.len(), cond.len()))
    } else {
        None
    };
    let columns: Vec<(DVector<f64>, bool)> = targets
        .par_iter()
        .map(|&j| {
            let xj = x.column(j).clone_owned();
            let fit = match &shared {
                Some(identity) => conditional_expectation_fit(&xc, identity, &xj),
                None => sir_directions(&xc, &xj, spec.config.n_slices, spec.config.direction_share)
                    .and_then(|sir| conditional_expectation_fit(&xc, &sir.directions, &xj)),
            };
            match fit {
                Ok(f) => (f.residual, false),
                Err(_) => (DVector::zeros(n), true),
            }
        })
        .collect();
    let mut residuals = DMatrix::zeros(n, targets.len());
    let mut failures = Vec::new();
    for (k, (col, failed)) in columns.into_iter().enumerate() {
        residuals.column_mut(k).copy_from(&col);
        if failed {
            failures.push(targets[k]);
        }
    }
    Ok((targets, residuals, failures))
}

fn statistics_from_residuals(
    residuals: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Vec<(f64, bool)> {
    (0..residuals.ncols())
        .into_par_iter()
        .map(|k| {
            let rows = DMatrix::from_fn(y.nrows(), y.ncols(), |i, r| {
                residuals[(i, k)] * y[(i, r)]
            });
            match EstimatingMatrix::new(rows).and_then(|g| el_ratio_at_zero(&g)) {
                Ok(sol) if sol.ratio.is_finite() => (sol.ratio, false),
                _ => (0.0, true),
            }
        })
        .collect()
}

/// CMELSIS statistics: for each target j outside C, the adjusted EL ratio
/// of the centralized rows (X_ij - Ê(X_j | B̂' X_C)) * y_i.
pub fn cmelsis_statistics(data: &Dataset, spec: &ConditioningSpec) -> Result<ConditionalScreen> {
    let data = data.standardize()?;
    let (targets, residuals, mut failures) = residual_matrix(&data, spec)?;
    let per = statistics_from_residuals(&residuals, data.y());
    let mut statistics = Vec::with_capacity(per.len());
    for (k, (v, failed)) in per.into_iter().enumerate() {
        statistics.push(v);
        if failed && !failures.contains(&targets[k]) {
            failures.push(targets[k]);
        }
    }
    failures.sort_unstable();
    Ok(ConditionalScreen {
        spec: spec.clone(),
        targets,
        statistics,
        failures,
    })
}

/// Soft threshold for the conditional screen. The centralization is
/// computed once; the auxiliary null statistics reuse the same residuals
/// against a single seeded permutation of the response rows.
pub fn cmelsis_soft_threshold(
    data: &Dataset,
    spec: &ConditioningSpec,
    tau: f64,
    seed: u64,
) -> Result<SoftThreshold> {
    if !(0.0 < tau && tau <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "quantile level must lie in (0, 1], got {tau}"
        )));
    }
    let data = data.standardize()?;
    let (targets, residuals, _) = residual_matrix(&data, spec)?;
    let stats: Vec<f64> = statistics_from_residuals(&residuals, data.y())
        .into_iter()
        .map(|(v, _)| v)
        .collect();
    let mut permutation: Vec<usize> = (0..data.n()).collect();
    permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let y_perm = DMatrix::from_fn(data.n(), data.q(), |i, k| data.y()[(permutation[i], k)]);
    let aux: Vec<f64> = statistics_from_residuals(&residuals, &y_perm)
        .into_iter()
        .map(|(v, _)| v)
        .collect();
    let mut sorted = aux;
    sorted.sort_by(f64::total_cmp);
    let rank = ((tau * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let gamma = sorted[rank - 1];
    let selected = targets
        .iter()
        .zip(&stats)
        .filter(|(_, &s)| s >= gamma)
        .map(|(&j, _)| j)
        .collect();
    Ok(SoftThreshold { gamma, selected })
}

/// Outcome of the two-step screen: marginal stage, conditional stage, and
/// the combined selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStepResult {
    /// Conditioning set C chosen by the first stage (ascending).
    pub conditioning: Vec<usize>,
    /// First-stage marginal screen (selected = C).
    pub stage_one: ScreeningResult,
    /// Second-stage conditional screen over the complement, absent when
    /// d2 = 0 or the complement is empty.
    pub stage_two: Option<ConditionalScreen>,
    /// C union the top-d2 conditional targets, ascending.
    pub selected: Vec<usize>,
}

/// Two-step screen: C = top-d1 marginal MELSIS indices, then CMELSIS on
/// the complement; the final model is C plus the top-d2 conditional
/// targets.
pub fn two_step_screen(
    data: &Dataset,
    d1: usize,
    d2: usize,
    config: &ConditioningConfig,
) -> Result<TwoStepResult> {
    let p = data.p();
    if d1 == 0 {
        return Err(Error::InvalidInput("first-stage size must be positive".into()));
    }
    if d1 + d2 > p {
        return Err(Error::InvalidInput(format!(
            "two-step sizes {d1}+{d2} exceed {p} predictors"
        )));
    }
    let data = data.standardize()?;
    let stats = melsis_statistics(&data)?;
    let ranking = rank_predictors(&stats.values);
    let mut conditioning: Vec<usize> = ranking[..d1].to_vec();
    conditioning.sort_unstable();
    let stage_one = ScreeningResult {
        method: Method::Melsis,
        universe: (0..p).collect(),
        statistics: stats.values,
        ranking,
        selected: conditioning.clone(),
        threshold: ThresholdRecord::None,
        failures: stats.failures,
    };
    let mut selected = conditioning.clone();
    let stage_two = if d2 > 0 && d1 < p {
        let spec = ConditioningSpec::with_config(conditioning.clone(), *config);
        let screen = cmelsis_statistics(&data, &spec)?;
        let top: Vec<usize> = screen.ranking().into_iter().take(d2).collect();
        selected.extend(top);
        Some(screen)
    } else {
        None
    };
    selected.sort_unstable();
    Ok(TwoStepResult {
        conditioning,
        stage_one,
        stage_two,
        selected,
    })
}

/// Default step budget for [`sequential_screen`]: floor(n / ln n).
pub fn default_max_steps(n: usize) -> usize {
    crate::screening::hard_threshold_size(n, 1.0)
}

/// Sequential forward screen: start from the marginal MELSIS argmax, then
/// repeatedly add the predictor maximizing the conditional statistic given
/// everything selected so far. Returns the indices in selection order.
pub fn sequential_screen(
    data: &Dataset,
    max_steps: usize,
    config: &ConditioningConfig,
) -> Result<Vec<usize>> {
    let p = data.p();
    if max_steps == 0 {
        return Err(Error::InvalidInput("need at least one step".into()));
    }
    if max_steps > p {
        return Err(Error::InvalidInput(format!(
            "cannot take {max_steps} steps over {p} predictors"
        )));
    }
    let data = data.standardize()?;
    let stats = melsis_statistics(&data)?;
    let mut order = vec![rank_predictors(&stats.values)[0]];
    while order.len() < max_steps {
        let spec = ConditioningSpec::with_config(order.clone(), *config);
        let screen = cmelsis_statistics(&data, &spec)?;
        match screen.best_target() {
            Some(next) => order.push(next),
            None => break,
        }
    }
    Ok(order)
}
