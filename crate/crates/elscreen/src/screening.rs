//! Marginal screening statistics and model selection rules.
//!
//! For predictor j the marginal estimating function is g_ij = X_ij * y_i
//! (q-dimensional). Three utilities rank predictors:
//!
//! * `melsis`: the joint adjusted EL ratio on the q-dimensional rows;
//! * `elsis_avg`: the average of the q per-response univariate EL ratios;
//! * `elsis_max`: their maximum.
//!
//! With q = 1 the three coincide. Per-predictor computations run in
//! parallel and are merged by index, so results do not depend on the
//! thread count.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::el::{el_ratio_at_zero, EstimatingMatrix};
use crate::error::{Error, Result};

/// Screening method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Melsis,
    ElsisAvg,
    ElsisMax,
    Cmelsis,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Melsis => "melsis",
            Method::ElsisAvg => "elsis_avg",
            Method::ElsisMax => "elsis_max",
            Method::Cmelsis => "cmelsis",
        }
    }
}

/// Statistic vector plus the indices whose solve failed numerically (their
/// statistic is reported as 0 so they rank last).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreeningStatistics {
    pub values: Vec<f64>,
    pub failures: Vec<usize>,
}

/// Marginal utility of a single statistic value, mapping solver failures to
/// zero as the screening convention.
fn utility(result: Result<crate::el::ElSolution>) -> (f64, bool) {
    match result {
        Ok(sol) if sol.ratio.is_finite() => (sol.ratio, false),
        _ => (0.0, true),
    }
}

/// Joint q-dimensional EL statistic for one predictor column.
fn melsis_one(x: &DMatrix<f64>, j: usize, y: &DMatrix<f64>) -> (f64, bool) {
    let rows = DMatrix::from_fn(y.nrows(), y.ncols(), |i, k| x[(i, j)] * y[(i, k)]);
    match EstimatingMatrix::new(rows) {
        Ok(g) => utility(el_ratio_at_zero(&g)),
        Err(_) => (0.0, true),
    }
}

/// All q univariate EL statistics for one predictor column.
fn response_ratios(x: &DMatrix<f64>, j: usize, y: &DMatrix<f64>) -> (Vec<f64>, bool) {
    let n = y.nrows();
    let mut out = Vec::with_capacity(y.ncols());
    let mut failed = false;
    for k in 0..y.ncols() {
        let rows = DMatrix::from_fn(n, 1, |i, _| x[(i, j)] * y[(i, k)]);
        let (v, f) = match EstimatingMatrix::new(rows) {
            Ok(g) => utility(el_ratio_at_zero(&g)),
            Err(_) => (0.0, true),
        };
        out.push(v);
        failed |= f;
    }
    (out, failed)
}

fn standardized(data: &Dataset) -> Result<std::borrow::Cow<'_, Dataset>> {
    if data.is_standardized() {
        Ok(std::borrow::Cow::Borrowed(data))
    } else {
        Ok(std::borrow::Cow::Owned(data.standardize()?))
    }
}

fn collect_statistics<F>(p: usize, f: F) -> ScreeningStatistics
where
    F: Fn(usize) -> (f64, bool) + Sync + Send,
{
    let per: Vec<(f64, bool)> = (0..p).into_par_iter().map(f).collect();
    let mut values = Vec::with_capacity(p);
    let mut failures = Vec::new();
    for (j, (v, failed)) in per.into_iter().enumerate() {
        values.push(v);
        if failed {
            failures.push(j);
        }
    }
    ScreeningStatistics { values, failures }
}

/// MELSIS statistics for every predictor. Standardizes the predictors
/// first when the dataset is raw.
pub fn melsis_statistics(data: &Dataset) -> Result<ScreeningStatistics> {
    let data = standardized(data)?;
    let x = data.x();
    let y = data.y();
    Ok(collect_statistics(data.p(), |j| melsis_one(x, j, y)))
}

/// Per-response univariate EL statistics: element `[k][j]` is the ratio
/// for predictor j against response k. Basis for `elsis_avg`, `elsis_max`
/// and the union-coverage summary.
pub fn response_statistics(data: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let data = standardized(data)?;
    let x = data.x();
    let y = data.y();
    let p = data.p();
    let q = data.q();
    let per: Vec<(Vec<f64>, bool)> = (0..p)
        .into_par_iter()
        .map(|j| response_ratios(x, j, y))
        .collect();
    let mut by_response = vec![vec![0.0; p]; q];
    let mut failures = Vec::new();
    for (j, (ratios, failed)) in per.into_iter().enumerate() {
        for k in 0..q {
            by_response[k][j] = ratios[k];
        }
        if failed {
            failures.push(j);
        }
    }
    Ok((by_response, failures))
}

/// Average of the per-response univariate statistics.
pub fn elsis_avg_statistics(data: &Dataset) -> Result<ScreeningStatistics> {
    let (by_response, failures) = response_statistics(data)?;
    let q = by_response.len() as f64;
    let p = by_response[0].len();
    let values = (0..p)
        .map(|j| by_response.iter().map(|r| r[j]).sum::<f64>() / q)
        .collect();
    Ok(ScreeningStatistics { values, failures })
}

/// Maximum of the per-response univariate statistics.
pub fn elsis_max_statistics(data: &Dataset) -> Result<ScreeningStatistics> {
    let (by_response, failures) = response_statistics(data)?;
    let p = by_response[0].len();
    let values = (0..p)
        .map(|j| by_response.iter().map(|r| r[j]).fold(f64::MIN, f64::max))
        .collect();
    Ok(ScreeningStatistics { values, failures })
}

/// Indices sorted by decreasing statistic; ties broken by ascending index.
pub fn rank_predictors(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Hard submodel size d = round(c * floor(n / ln n)).
///
/// The integer part is taken of n/ln n first; the scaled value is then
/// rounded half away from zero, which reproduces the conventional sizes
/// 21, 32 and 42 at n = 100 for c = 1, 1.5 and 2.
pub fn hard_threshold_size(n: usize, c: f64) -> usize {
    assert!(n >= 2, "hard threshold needs n >= 2");
    assert!(c > 0.0, "scale factor must be positive");
    let base = (n as f64 / (n as f64).ln()).floor();
    (c * base).round() as usize
}

/// Selection rule applied to a statistic vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SelectionRule {
    /// Keep the top d ranked predictors.
    Hard { d: usize },
    /// Keep every predictor whose statistic is >= gamma (ties included).
    Soft { gamma: f64 },
}

/// Outcome of applying a [`SelectionRule`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection {
    /// Selected predictor indices, ascending.
    pub indices: Vec<usize>,
    /// True when a hard rule asked for more predictors than exist.
    pub clamped: bool,
}

/// Applies a selection rule to the statistics.
pub fn select_model(values: &[f64], rule: &SelectionRule) -> Selection {
    match rule {
        SelectionRule::Hard { d } => {
            let ranking = rank_predictors(values);
            let keep = (*d).min(values.len());
            let mut indices: Vec<usize> = ranking[..keep].to_vec();
            indices.sort_unstable();
            Selection {
                indices,
                clamped: *d > values.len(),
            }
        }
        SelectionRule::Soft { gamma } => {
            let indices = (0..values.len()).filter(|&j| values[j] >= *gamma).collect();
            Selection {
                indices,
                clamped: false,
            }
        }
    }
}

/// Soft-threshold outcome: the permutation-quantile cutoff and the
/// selected set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftThreshold {
    pub gamma: f64,
    pub selected: Vec<usize>,
}

/// Data-driven soft threshold: permute the response rows once (seeded),
/// recompute the utilities as auxiliary null statistics, and cut the
/// original utilities at the upper tau-quantile (nearest rank) of the
/// auxiliary ones.
pub fn soft_threshold(
    data: &Dataset,
    method: Method,
    tau: f64,
    seed: u64,
) -> Result<SoftThreshold> {
    let mut permutation: Vec<usize> = (0..data.n()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    permutation.shuffle(&mut rng);
    soft_threshold_with_permutation(data, method, tau, &permutation)
}

/// Soft threshold with an explicit permutation (exposed so the degenerate
/// identity path can be exercised deterministically).
pub fn soft_threshold_with_permutation(
    data: &Dataset,
    method: Method,
    tau: f64,
    permutation: &[usize],
) -> Result<SoftThreshold> {
    if !(0.0 < tau && tau <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "quantile level must lie in (0, 1], got {tau}"
        )));
    }
    if permutation.len() != data.n() {
        return Err(Error::DimensionMismatch(
            "permutation length does not match the number of observations".into(),
        ));
    }
    let statistics = method_statistics(data, method)?;
    let permuted = data.with_permuted_responses(permutation);
    let auxiliary = method_statistics(&permuted, method)?;
    let gamma = nearest_rank_quantile(&auxiliary.values, tau);
    let selected = select_model(&statistics.values, &SelectionRule::Soft { gamma }).indices;
    Ok(SoftThreshold { gamma, selected })
}

fn method_statistics(data: &Dataset, method: Method) -> Result<ScreeningStatistics> {
    match method {
        Method::Melsis => melsis_statistics(data),
        Method::ElsisAvg => elsis_avg_statistics(data),
        Method::ElsisMax => elsis_max_statistics(data),
        Method::Cmelsis => Err(Error::InvalidInput(
            "conditional screening needs a conditioning set; use the conditional module".into(),
        )),
    }
}

/// Upper tau-quantile by the nearest-rank rule; tau = 1 is the maximum.
fn nearest_rank_quantile(values: &[f64], tau: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let rank = ((tau * m as f64).ceil() as usize).clamp(1, m);
    sorted[rank - 1]
}

/// Record of the threshold applied to a screening run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdRecord {
    Hard { c: f64, d: usize },
    Soft { tau: f64, gamma: f64, seed: u64 },
    None,
}

/// Full outcome of a screening run, serializable for reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub method: Method,
    /// Predictor indices the statistics refer to (0..p for marginal
    /// screens; the target set D for conditional ones).
    pub universe: Vec<usize>,
    /// Statistic values aligned with `universe`.
    pub statistics: Vec<f64>,
    /// Original predictor indices ordered by decreasing statistic.
    pub ranking: Vec<usize>,
    /// Selected predictor indices, ascending.
    pub selected: Vec<usize>,
    pub threshold: ThresholdRecord,
    /// Predictors whose statistic fell back to zero after a solver failure.
    pub failures: Vec<usize>,
}

/// Threshold configuration for [`screen`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdSpec {
    /// d = round(c * floor(n / ln n)).
    Hard { c: f64 },
    /// Permutation-quantile rule at level tau with the given seed.
    Soft { tau: f64, seed: u64 },
    /// Rank only; select nothing.
    None,
}

/// Runs one marginal screen end to end: statistics, ranking, selection.
pub fn screen(data: &Dataset, method: Method, threshold: &ThresholdSpec) -> Result<ScreeningResult> {
    let statistics = method_statistics(data, method)?;
    let ranking = rank_predictors(&statistics.values);
    let (selected, record) = match threshold {
        ThresholdSpec::Hard { c } => {
            let d = hard_threshold_size(data.n(), *c);
            let sel = select_model(&statistics.values, &SelectionRule::Hard { d });
            (sel.indices, ThresholdRecord::Hard { c: *c, d })
        }
        ThresholdSpec::Soft { tau, seed } => {
            let soft = soft_threshold(data, method, *tau, *seed)?;
            (
                soft.selected,
                ThresholdRecord::Soft {
                    tau: *tau,
                    gamma: soft.gamma,
                    seed: *seed,
                },
            )
        }
        ThresholdSpec::None => (Vec::new(), ThresholdRecord::None),
    };
    Ok(ScreeningResult {
        method,
        universe: (0..data.p()).collect(),
        statistics: statistics.values,
        ranking,
        selected,
        threshold: record,
        failures: statistics.failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank_predictors(&[0.3, 0.9, 0.3]), vec![1, 0, 2]);
        assert_eq!(rank_predictors(&[1.0, 1.0, 1.0]), vec![0, 1, 2]);
        assert_eq!(rank_predictors(&[]), Vec::<usize>::new());
    }

    #[test]
    fn hard_threshold_reference_sizes() {
        assert_eq!(hard_threshold_size(100, 1.0), 21);
        assert_eq!(hard_threshold_size(100, 1.5), 32);
        assert_eq!(hard_threshold_size(100, 2.0), 42);
        assert_eq!(hard_threshold_size(29, 1.0), 8);
    }

    #[test]
    fn select_model_hard_and_soft() {
        let values = [0.5, 2.0, 1.0, 2.0];
        let hard = select_model(&values, &SelectionRule::Hard { d: 2 });
        assert_eq!(hard.indices, vec![1, 3]);
        assert!(!hard.clamped);
        let clamped = select_model(&values, &SelectionRule::Hard { d: 9 });
        assert_eq!(clamped.indices, vec![0, 1, 2, 3]);
        assert!(clamped.clamped);
        // Boundary ties are kept by the soft rule.
        let soft = select_model(&values, &SelectionRule::Soft { gamma: 2.0 });
        assert_eq!(soft.indices, vec![1, 3]);
        let all = select_model(&values, &SelectionRule::Soft { gamma: 0.0 });
        assert_eq!(all.indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn nearest_rank_quantile_conventions() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(nearest_rank_quantile(&v, 1.0), 4.0);
        assert_eq!(nearest_rank_quantile(&v, 0.5), 2.0);
        assert_eq!(nearest_rank_quantile(&v, 0.75), 3.0);
        assert_eq!(nearest_rank_quantile(&v, 0.01), 1.0);
    }

    #[test]
    fn zero_sum_predictor_ranks_last() {
        // Build predictor 2 orthogonal to both the response and the constant
        // so its estimating rows sum to zero (standardization preserves this)
        // and its statistic vanishes.
        let n = 6;
        let y = nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 2.5, -1.0]);
        let ones = nalgebra::DVector::from_element(n, 1.0);
        let proj = |v: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>| {
            b * (v.dot(b) / b.dot(b))
        };
        // Gram-Schmidt basis for span{ones, y}, then strip both components.
        let y_perp = &y - proj(&y, &ones);
        let mut c = nalgebra::DVector::from_vec(vec![1.0, -1.0, -1.0, 1.0, 0.5, -0.5]);
        c -= proj(&c, &ones);
        c -= proj(&c, &y_perp);
        assert!(c.dot(&y).abs() <= 1e-12 && c.sum().abs() <= 1e-12);
        let mut x = DMatrix::zeros(n, 3);
        x.column_mut(0).copy_from(&y); // strong signal
        x.column_mut(1)
            .copy_from(&nalgebra::DVector::from_vec(vec![
                0.3, -0.2, 1.1, 0.4, -0.9, 0.6,
            ]));
        x.column_mut(2).copy_from(&c);
        let y = DMatrix::from_fn(n, 1, |i, _| y[i]);
        let data = Dataset::from_matrices(x, y).unwrap();
        let stats = melsis_statistics(&data).unwrap();
        let ranking = rank_predictors(&stats.values);
        assert!(stats.values[2].abs() <= 1e-8, "got {}", stats.values[2]);
        assert_eq!(*ranking.last().unwrap(), 2);
        assert_eq!(ranking[0], 0);
    }

    #[test]
    fn q1_screeners_coincide() {
        let s = crate::simgen::SimulationScenario::varied_q(40, 8, 1, 11).unwrap();
        let data = crate::simgen::generate(&s).unwrap();
        let a = melsis_statistics(&data).unwrap().values;
        let b = elsis_avg_statistics(&data).unwrap().values;
        let c = elsis_max_statistics(&data).unwrap().values;
        for j in 0..8 {
            assert!((a[j] - b[j]).abs() <= 1e-10);
            assert!((a[j] - c[j]).abs() <= 1e-10);
        }
    }

    #[test]
    fn duplicated_response_keeps_elsis_max() {
        let s = crate::simgen::SimulationScenario::varied_q(40, 6, 1, 13).unwrap();
        let data = crate::simgen::generate(&s).unwrap();
        let single = elsis_max_statistics(&data).unwrap().values;
        let y2 = DMatrix::from_fn(data.n(), 2, |i, _| data.y()[(i, 0)]);
        let doubled = Dataset::from_matrices(data.x().clone(), y2).unwrap();
        let both = elsis_max_statistics(&doubled).unwrap().values;
        for j in 0..6 {
            assert!((single[j] - both[j]).abs() <= 1e-10);
        }
    }

    #[test]
    fn soft_threshold_tau_one_is_max() {
        let s = crate::simgen::SimulationScenario::varied_q(30, 10, 2, 5).unwrap();
        let data = crate::simgen::generate(&s).unwrap().standardize().unwrap();
        let identity: Vec<usize> = (0..30).collect();
        let soft =
            soft_threshold_with_permutation(&data, Method::Melsis, 1.0, &identity).unwrap();
        let stats = melsis_statistics(&data).unwrap();
        let max = stats.values.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(soft.gamma, max);
        // With the identity permutation the auxiliary statistics equal the
        // originals, so exactly the argmax (and ties) survive.
        assert!(soft.selected.iter().all(|&j| stats.values[j] >= max));
        assert!(!soft.selected.is_empty());
    }

    #[test]
    fn screen_driver_records_threshold() {
        let s = crate::simgen::SimulationScenario::varied_q(100, 12, 2, 3).unwrap();
        let data = crate::simgen::generate(&s).unwrap();
        let result = screen(&data, Method::Melsis, &ThresholdSpec::Hard { c: 1.0 }).unwrap();
        assert_eq!(result.selected.len(), 12); // d = 21 clamps to p = 12
        match result.threshold {
            ThresholdRecord::Hard { d, .. } => assert_eq!(d, 21),
            _ => panic!("expected hard threshold record"),
        }
        let json = serde_json::to_string(&result).unwrap();
        let again = screen(&data, Method::Melsis, &ThresholdSpec::Hard { c: 1.0 }).unwrap();
        assert_eq!(json, serde_json::to_string(&again).unwrap());
    }
}
