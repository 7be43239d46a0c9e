//! Screening-quality metrics, eigenvalue diagnostics for the sure-screening
//! conditions, and the Taylor-expansion comparator.
//!
//! Everything here is a pure reduction over inputs computed elsewhere, so
//! the functions are trivially parallel-safe.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::el::{el_ratio_at_zero, EstimatingMatrix};
use crate::error::{Error, Result};
use crate::screening::ThresholdRecord;

/// Quantile levels used for the minimum-model-size summaries.
pub const MMS_PROBS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Minimum model size: the smallest prefix of the ranking containing every
/// active predictor, i.e. 1 plus the worst (largest) 0-based rank of an
/// active index.
pub fn minimal_model_size(ranking: &[usize], active: &[usize]) -> Result<usize> {
    // Rankings may carry arbitrary original indices (conditional screens
    // rank a subset of the predictors), so look positions up by value.
    let position: BTreeMap<usize, usize> =
        ranking.iter().enumerate().map(|(pos, &j)| (j, pos)).collect();
    let mut worst = 0usize;
    for &j in active {
        match position.get(&j) {
            Some(&pos) => worst = worst.max(pos),
            None => return Err(Error::MissingActive { index: j }),
        }
    }
    Ok(worst + 1)
}

/// Union-coverage model size for the per-response screen: the smallest
/// depth d such that every active predictor appears in the top d of at
/// least one response's ranking ("recovered in any model at least once").
pub fn union_model_size(rankings: &[Vec<usize>], active: &[usize]) -> Result<usize> {
    if rankings.is_empty() {
        return Err(Error::InvalidInput("no rankings supplied".into()));
    }
    let mut worst = 0usize;
    for &j in active {
        let mut best = usize::MAX;
        for ranking in rankings {
            if let Some(pos) = ranking.iter().position(|&r| r == j) {
                best = best.min(pos);
            }
        }
        if best == usize::MAX {
            return Err(Error::MissingActive { index: j });
        }
        worst = worst.max(best);
    }
    Ok(worst + 1)
}

/// Per-variable and joint selection proportions over replications.
///
/// Returns (p_j keyed by active index, p_a).
pub fn coverage_proportions(
    selections: &[Vec<usize>],
    active: &[usize],
) -> Result<(BTreeMap<usize, f64>, f64)> {
    if selections.is_empty() {
        return Err(Error::InvalidInput(
            "coverage needs at least one replication".into(),
        ));
    }
    let reps = selections.len() as f64;
    let mut p_j = BTreeMap::new();
    let mut all = 0usize;
    let mut counts: BTreeMap<usize, usize> = active.iter().map(|&j| (j, 0)).collect();
    for selection in selections {
        let mut covered = 0usize;
        for &j in active {
            if selection.contains(&j) {
                *counts.get_mut(&j).unwrap() += 1;
                covered += 1;
            }
        }
        if covered == active.len() {
            all += 1;
        }
    }
    for (&j, &c) in &counts {
        p_j.insert(j, c as f64 / reps);
    }
    Ok((p_j, all as f64 / reps))
}

/// Linear-interpolation (type-7) empirical quantiles at the given levels.
pub fn quantile_summary(values: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("quantiles of an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("quantiles need finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    probs
        .iter()
        .map(|&p| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!(
                    "quantile level {p} outside [0, 1]"
                )));
            }
            let h = (n as f64 - 1.0) * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
        })
        .collect()
}

/// Summary of one method over a set of replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Row label: a method tag, possibly decorated with the conditioning
    /// set or stage sizes (e.g. "melsis", "cmelsis_c1", "two_step_d1_3").
    pub method: String,
    pub replications: usize,
    pub model_size_rule: ThresholdRecord,
    /// Minimum-model-size quantiles at [`MMS_PROBS`].
    pub mms_quantiles: Vec<f64>,
    /// Selection proportion per active predictor index.
    pub p_j: BTreeMap<usize, f64>,
    /// Proportion of replications selecting every active predictor.
    pub p_a: f64,
    /// Optional union-coverage quantiles (the per-response "recovered in
    /// any model" reading of the combined screen).
    pub union_coverage: Option<Vec<f64>>,
}

impl EvaluationReport {
    /// Validating constructor enforcing the report invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: impl Into<String>,
        replications: usize,
        model_size_rule: ThresholdRecord,
        mms_quantiles: Vec<f64>,
        p_j: BTreeMap<usize, f64>,
        p_a: f64,
        union_coverage: Option<Vec<f64>>,
    ) -> Result<Self> {
        let nondecreasing = |q: &[f64]| q.windows(2).all(|w| w[0] <= w[1]);
        if !nondecreasing(&mms_quantiles) {
            return Err(Error::InvalidInput("quantiles must be nondecreasing".into()));
        }
        if let Some(u) = &union_coverage {
            if !nondecreasing(u) {
                return Err(Error::InvalidInput("quantiles must be nondecreasing".into()));
            }
        }
        let proportion = |v: f64| (0.0..=1.0).contains(&v);
        if !proportion(p_a) || p_j.values().any(|&v| !proportion(v)) {
            return Err(Error::InvalidInput("proportions must lie in [0, 1]".into()));
        }
        if let Some(min_pj) = p_j.values().cloned().reduce(f64::min) {
            if p_a > min_pj + 1e-12 {
                return Err(Error::InvalidInput(
                    "joint proportion exceeds a per-variable proportion".into(),
                ));
            }
        }
        Ok(EvaluationReport {
            method: method.into(),
            replications,
            model_size_rule,
            mms_quantiles,
            p_j,
            p_a,
            union_coverage,
        })
    }

    /// Builds a report from per-replication outcomes.
    pub fn summarize(
        method: impl Into<String>,
        model_size_rule: ThresholdRecord,
        mms: &[usize],
        selections: &[Vec<usize>],
        active: &[usize],
        union_sizes: Option<&[usize]>,
    ) -> Result<Self> {
        if mms.len() != selections.len() {
            return Err(Error::DimensionMismatch(
                "one model size and one selection per replication".into(),
            ));
        }
        let as_f64 = |v: &[usize]| v.iter().map(|&m| m as f64).collect::<Vec<_>>();
        let mms_quantiles = quantile_summary(&as_f64(mms), &MMS_PROBS)?;
        let (p_j, p_a) = coverage_proportions(selections, active)?;
        let union_coverage = match union_sizes {
            Some(u) => Some(quantile_summary(&as_f64(u), &MMS_PROBS)?),
            None => None,
        };
        EvaluationReport::new(
            method,
            mms.len(),
            model_size_rule,
            mms_quantiles,
            p_j,
            p_a,
            union_coverage,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header for [`EvaluationReport::csv_row`]: method by quantile grid
    /// plus the joint coverage column.
    pub fn csv_header() -> &'static str {
        "method,replications,mms_p05,mms_p25,mms_p50,mms_p75,mms_p95,p_a,\
         union_p05,union_p25,union_p50,union_p75,union_p95"
    }

    /// One aligned CSV row per report; union columns stay empty when the
    /// union metric was not computed.
    pub fn csv_row(&self) -> String {
        let quantiles = |q: &[f64]| {
            q.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let union = match &self.union_coverage {
            Some(u) => quantiles(u),
            None => ",,,,".to_string(),
        };
        format!(
            "{},{},{},{},{}",
            self.method,
            self.replications,
            quantiles(&self.mms_quantiles),
            self.p_a,
            union
        )
    }
}

/// Covariance-level input for the screening-condition diagnostics: the
/// p-by-p predictor covariance and the p-by-q matrix of cross moments
/// E[X_j y_k] (row j holds the vector E[X_j y]).
#[derive(Debug, Clone)]
pub struct DiagnosticsInput {
    cov_xx: DMatrix<f64>,
    moments_xy: DMatrix<f64>,
}

impl DiagnosticsInput {
    /// Sample covariances from a dataset; predictors are standardized
    /// first, matching the screening statistics.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let data = data.standardize()?;
        let n = data.n() as f64;
        let x = data.x();
        let cov_xx = x.transpose() * x / n;
        let moments_xy = x.transpose() * data.y() / n;
        Ok(DiagnosticsInput { cov_xx, moments_xy })
    }

    /// Explicit population covariances. `cov_xx` must be symmetric with
    /// as many rows as `moments_xy`.
    pub fn from_population(cov_xx: DMatrix<f64>, moments_xy: DMatrix<f64>) -> Result<Self> {
        if !cov_xx.is_square() || cov_xx.nrows() != moments_xy.nrows() {
            return Err(Error::DimensionMismatch(
                "covariance must be square with one row per predictor moment".into(),
            ));
        }
        let scale = cov_xx.amax().max(1.0);
        if (&cov_xx - cov_xx.transpose()).amax() > 1e-8 * scale {
            return Err(Error::InvalidInput("covariance must be symmetric".into()));
        }
        if cov_xx.iter().chain(moments_xy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariances must be finite".into()));
        }
        Ok(DiagnosticsInput { cov_xx, moments_xy })
    }

    pub fn p(&self) -> usize {
        self.cov_xx.nrows()
    }
}

/// One side of the screening-condition check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsPart {
    /// K * lambda_max(cov(X_A, X_I')cov(X_I, X_A')) / lambda_min(cov(X_A, X_A')),
    /// the left side of the sufficient condition; `None` encodes +infinity
    /// (active covariance numerically singular).
    pub scaled_ratio: Option<f64>,
    /// The same ratio without the K = |A| factor (the eigenvalue-gap
    /// quantity quoted in discussion).
    pub raw_ratio: Option<f64>,
    /// min over active j of ||E X_j y||^2.
    pub rhs_min: f64,
    /// Whether scaled_ratio <= rhs_min (false when the ratio is infinite).
    pub condition_holds: bool,
    /// Number of active predictors entering the bound.
    pub k: usize,
    pub lambda_max_cross: f64,
    pub lambda_min_active: f64,
}

/// Diagnostics for the marginal condition and, when a conditioning set is
/// supplied, its centralized analogue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropositionDiagnostics {
    pub unconditional: DiagnosticsPart,
    /// Computed on residual covariances after projecting out the
    /// conditioning block; active and inactive sets shrink by the
    /// conditioned indices.
    pub conditional: Option<DiagnosticsPart>,
}

const SINGULAR_EIGEN_FLOOR: f64 = 1e-12;

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) / 2.0;
    let eig = SymmetricEigen::new(sym);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        min = min.min(l);
        max = max.max(l);
    }
    (min, max)
}

/// Moore-Penrose inverse of a symmetric PSD matrix (eigenvalues below
/// 1e-12 * lambda_max are treated as zero).
fn pseudo_inverse_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) / 2.0;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = SINGULAR_EIGEN_FLOOR * lmax.max(f64::MIN_POSITIVE);
    let inv = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&l| if l > tol { 1.0 / l } else { 0.0 }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

fn diagnostics_part(input: &DiagnosticsInput, active: &[usize], inactive: &[usize]) -> DiagnosticsPart {
    let k = active.len();
    let saa = submatrix(&input.cov_xx, active, active);
    let (lambda_min_active, _) = eigen_range(&saa);
    let lambda_max_cross = if inactive.is_empty() {
        0.0
    } else {
        let sai = submatrix(&input.cov_xx, active, inactive);
        let (_, lmax) = eigen_range(&(&sai * sai.transpose()));
        lmax.max(0.0)
    };
    let rhs_min = active
        .iter()
        .map(|&j| input.moments_xy.row(j).norm_squared())
        .fold(f64::INFINITY, f64::min);
    let (scaled_ratio, raw_ratio, condition_holds) = if lambda_min_active < SINGULAR_EIGEN_FLOOR {
        (None, None, false)
    } else {
        let raw = lambda_max_cross / lambda_min_active;
        let scaled = k as f64 * raw;
        (Some(scaled), Some(raw), scaled <= rhs_min)
    };
    DiagnosticsPart {
        scaled_ratio,
        raw_ratio,
        rhs_min,
        condition_holds,
        k,
        lambda_max_cross,
        lambda_min_active,
    }
}

/// Projects the conditioning block out of both covariance inputs:
/// cov(X - P X_C) and E[(X - P X_C) y] with P the population regression
/// of X on X_C (pseudo-inverse when the block is singular).
fn residualize(input: &DiagnosticsInput, cond: &[usize]) -> DiagnosticsInput {
    let p = input.p();
    let all: Vec<usize> = (0..p).collect();
    let scc = submatrix(&input.cov_xx, cond, cond);
    let sxc = submatrix(&input.cov_xx, &all, cond);
    let proj = &sxc * pseudo_inverse_psd(&scc);
    let cov = &input.cov_xx - &proj * sxc.transpose();
    let cov_xx = (&cov + cov.transpose()) / 2.0;
    let xyc = DMatrix::from_fn(cond.len(), input.moments_xy.ncols(), |i, k| {
        input.moments_xy[(cond[i], k)]
    });
    let moments_xy = &input.moments_xy - proj * xyc;
    DiagnosticsInput { cov_xx, moments_xy }
}

fn validate_index_set(label: &str, set: &[usize], p: usize) -> Result<()> {
    let mut seen = vec![false; p];
    for &j in set {
        if j >= p {
            return Err(Error::InvalidInput(format!(
                "{label} index {j} out of range for {p} predictors"
            )));
        }
        if seen[j] {
            return Err(Error::InvalidInput(format!(
                "{label} index {j} listed twice"
            )));
        }
        seen[j] = true;
    }
    Ok(())
}

/// Evaluates the sufficient-condition ratio and its centralized version.
///
/// The conditional part removes `cond` from both the active and inactive
/// sets (the residual of a conditioned coordinate is identically zero, so
/// keeping it would make both sides of the bound degenerate).
pub fn proposition_diagnostics(
    input: &DiagnosticsInput,
    active: &[usize],
    inactive: &[usize],
    cond: Option<&[usize]>,
) -> Result<PropositionDiagnostics> {
    let p = input.p();
    validate_index_set("active", active, p)?;
    validate_index_set("inactive", inactive, p)?;
    if active.is_empty() {
        return Err(Error::InvalidInput("active set must be nonempty".into()));
    }
    if active.iter().any(|j| inactive.contains(j)) {
        return Err(Error::InvalidInput(
            "active and inactive sets must be disjoint".into(),
        ));
    }
    let unconditional = diagnostics_part(input, active, inactive);
    let conditional = match cond {
        Some(c) if !c.is_empty() => {
            validate_index_set("conditioning", c, p)?;
            let reduced = residualize(input, c);
            let a: Vec<usize> = active.iter().copied().filter(|j| !c.contains(j)).collect();
            let i: Vec<usize> = inactive.iter().copied().filter(|j| !c.contains(j)).collect();
            if a.is_empty() {
                return Err(Error::InvalidInput(
                    "conditioning set covers every active predictor".into(),
                ));
            }
            Some(diagnostics_part(&reduced, &a, &i))
        }
        _ => None,
    };
    Ok(PropositionDiagnostics {
        unconditional,
        conditional,
    })
}

/// The EL statistic next to its three Taylor-expansion approximations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaylorComparison {
    /// Adjusted EL ratio at zero (the crate's screening statistic).
    pub el_ratio: f64,
    /// n * mean' * S^{-1} * mean with S the uncentered second moment.
    pub hotelling: f64,
    /// Same with S replaced by its diagonal.
    pub avg_form: f64,
    /// Largest single-component statistic n * mean_k^2 / S_kk.
    pub max_form: f64,
}

/// Computes the EL ratio and the quadratic forms it expands into.
pub fn taylor_comparator(g: &EstimatingMatrix) -> Result<TaylorComparison> {
    let el_ratio = el_ratio_at_zero(g)?.ratio;
    let n = g.n_rows() as f64;
    let mean = g.column_means();
    let second = g.rows().transpose() * g.rows() / n;
    let hotelling = {
        let mut ridge = 0.0;
        let trace = second.trace().max(f64::MIN_POSITIVE);
        loop {
            let mut shifted = second.clone();
            for d in 0..shifted.nrows() {
                shifted[(d, d)] += ridge;
            }
            match shifted.cholesky() {
                Some(chol) => break n * mean.dot(&chol.solve(&mean)),
                None if ridge < 1e-4 * trace => {
                    ridge = if ridge == 0.0 { 1e-10 * trace } else { ridge * 10.0 };
                }
                None => {
                    return Err(Error::NumericalFailure(
                        "second-moment matrix is singular beyond ridge repair".into(),
                    ))
                }
            }
        }
    };
    let mut avg_form = 0.0;
    let mut max_form = f64::NEG_INFINITY;
    for k in 0..g.dim() {
        let skk = second[(k, k)];
        if skk <= 0.0 {
            return Err(Error::NumericalFailure(format!(
                "component {k} has zero second moment"
            )));
        }
        let term = n * mean[k] * mean[k] / skk;
        avg_form += term;
        max_form = max_form.max(term);
    }
    Ok(TaylorComparison {
        el_ratio,
        hotelling,
        avg_form,
        max_form,
    })
}
