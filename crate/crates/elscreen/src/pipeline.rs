//! Dataset ingestion from CSV and the two-stage analysis pipeline
//! (screen, then per-response lasso with BIC model choice).

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::screening::{self, Method};

/// Options for [`load_csv`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Standardize the predictor columns after loading.
    pub standardize: bool,
}

struct NumericTable {
    names: Vec<String>,
    values: DMatrix<f64>,
}

/// Reads one rectangular numeric CSV. A header row is detected by its
/// first line containing any cell that does not parse as a number; parse
/// errors cite 1-based file row and column.
fn read_table(path: &Path, default_prefix: &str) -> Result<NumericTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = Vec::new();
    for record in reader.records() {
        records.push(record?);
    }
    if records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} is empty",
            path.display()
        )));
    }
    let has_header = records[0].iter().any(|cell| cell.parse::<f64>().is_err());
    let (names, first_data_row) = if has_header {
        let names = records[0].iter().map(str::to_owned).collect();
        (names, 1usize)
    } else {
        let cols = records[0].len();
        let names = (1..=cols)
            .map(|j| format!("{default_prefix}{j}"))
            .collect();
        (names, 0usize)
    };
    let cols = records[0].len();
    let data_rows = records.len() - first_data_row;
    if data_rows == 0 {
        return Err(Error::InvalidInput(format!(
            "{} holds a header but no data rows",
            path.display()
        )));
    }
    let mut values = DMatrix::zeros(data_rows, cols);
    for (i, record) in records[first_data_row..].iter().enumerate() {
        let file_row = first_data_row + i + 1;
        if record.len() != cols {
            return Err(Error::DimensionMismatch(format!(
                "{} row {} has {} cells, expected {}",
                path.display(),
                file_row,
                record.len(),
                cols
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let parsed = cell.parse::<f64>().map_err(|e| Error::Parse {
                row: file_row,
                column: j + 1,
                detail: format!("{e} (cell {cell:?})"),
            })?;
            if !parsed.is_finite() {
                return Err(Error::Parse {
                    row: file_row,
                    column: j + 1,
                    detail: format!("non-finite value {cell:?}"),
                });
            }
            values[(i, j)] = parsed;
        }
    }
    Ok(NumericTable { names, values })
}

/// Loads a dataset from separate predictor and response CSV files. Both
/// files may carry an optional header row; row counts must agree.
pub fn load_csv(x_path: &Path, y_path: &Path, options: LoadOptions) -> Result<Dataset> {
    let x = read_table(x_path, "x")?;
    let y = read_table(y_path, "y")?;
    if x.values.nrows() != y.values.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} data rows but {} has {}",
            x_path.display(),
            x.values.nrows(),
            y_path.display(),
            y.values.nrows()
        )));
    }
    let data = Dataset::new(x.values, y.values, x.names, y.names)?;
    if options.standardize {
        data.standardize()
    } else {
        Ok(data)
    }
}

fn write_table(path: &Path, names: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", names.join(","))?;
    for i in 0..values.nrows() {
        let row: Vec<String> = (0..values.ncols())
            // 17 significant digits guarantee exact f64 round-trips.
            .map(|j| format!("{:.16e}", values[(i, j)]))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the dataset as two headered CSV files that [`load_csv`] reads
/// back bit-exactly.
pub fn write_dataset_csv(data: &Dataset, x_path: &Path, y_path: &Path) -> Result<()> {
    write_table(x_path, data.predictor_names(), data.x())?;
    write_table(y_path, data.response_names(), data.y())
}

const LASSO_TOLERANCE: f64 = 1e-7;
const LASSO_MAX_SWEEPS: usize = 100_000;

/// Cyclic coordinate descent for (1/2n)||y - X b||^2 + lambda * ||b||_1,
/// converged when no coefficient moves by more than 1e-7 in a sweep.
/// The design is used as given (no internal centering).
pub fn lasso_coordinate_descent(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    assert!(lambda >= 0.0, "penalty must be nonnegative");
    assert_eq!(x.nrows(), y.len(), "design and response rows must agree");
    let n = x.nrows() as f64;
    let s = x.ncols();
    let norms: Vec<f64> = (0..s).map(|j| x.column(j).norm_squared() / n).collect();
    let mut beta = DVector::zeros(s);
    let mut residual = y.clone();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..s {
            if norms[j] <= 0.0 {
                continue;
            }
            let old = beta[j];
            let rho = x.column(j).dot(&residual) / n + norms[j] * old;
            let new = soft_threshold(rho, lambda) / norms[j];
            if new != old {
                residual.axpy(old - new, &x.column(j).clone_owned(), 1.0);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change <= LASSO_TOLERANCE {
            break;
        }
    }
    beta
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// A lasso regularization path with the BIC-selected point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoFit {
    /// Decreasing penalty values (geometric grid from lambda_max down to
    /// 0.001 * lambda_max).
    pub lambda_path: Vec<f64>,
    /// Coefficient vector per path point.
    pub coefficients: Vec<Vec<f64>>,
    /// (1/n) * residual sum of squares per path point.
    pub rss: Vec<f64>,
    /// Nonzero-coefficient count per path point.
    pub df: Vec<usize>,
    /// n * log(RSS) + df * log(n) per path point.
    pub bic: Vec<f64>,
    /// Path index minimizing BIC (earliest on ties, i.e. the sparser fit).
    pub selected_index: usize,
    pub selected_lambda: f64,
}

const LASSO_PATH_POINTS: usize = 50;
const LASSO_PATH_FLOOR: f64 = 1e-3;

/// Fits the default 50-point geometric lasso path with warm starts and
/// selects the penalty by BIC = n log(RSS) + df log(n).
///
/// df is weakly nondecreasing along the path in all but pathological
/// designs; that property is not enforced.
pub fn lasso_path_bic(x: &DMatrix<f64>, y: &DVector<f64>) -> LassoFit {
    let n = x.nrows() as f64;
    let s = x.ncols();
    let lambda_max = (0..s)
        .map(|j| (x.column(j).dot(y) / n).abs())
        .fold(0.0f64, f64::max);
    let lambda_path: Vec<f64> = if lambda_max <= f64::MIN_POSITIVE {
        vec![0.0]
    } else {
        (0..LASSO_PATH_POINTS)
            .map(|t| {
                lambda_max * LASSO_PATH_FLOOR.powf(t as f64 / (LASSO_PATH_POINTS - 1) as f64)
            })
            .collect()
    };
    let mut coefficients = Vec::with_capacity(lambda_path.len());
    let mut rss = Vec::with_capacity(lambda_path.len());
    let mut df = Vec::with_capacity(lambda_path.len());
    let mut bic = Vec::with_capacity(lambda_path.len());
    let mut beta = DVector::zeros(s);
    for &lambda in &lambda_path {
        // Warm start from the previous (larger) penalty.
        beta = warm_coordinate_descent(x, y, lambda, beta);
        let fitted = x * &beta;
        let r = (y - fitted).norm_squared() / n;
        let nonzero = beta.iter().filter(|&&b| b != 0.0).count();
        rss.push(r);
        df.push(nonzero);
        bic.push(n * r.max(1e-300).ln() + nonzero as f64 * n.ln());
        coefficients.push(beta.iter().copied().collect());
    }
    let selected_index = bic
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    LassoFit {
        selected_lambda: lambda_path[selected_index],
        lambda_path,
        coefficients,
        rss,
        df,
        bic,
        selected_index,
    }
}

fn warm_coordinate_descent(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    start: DVector<f64>,
) -> DVector<f64> {
    let n = x.nrows() as f64;
    let s = x.ncols();
    let norms: Vec<f64> = (0..s).map(|j| x.column(j).norm_squared() / n).collect();
    let mut beta = start;
    let mut residual = y - x * &beta;
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..s {
            if norms[j] <= 0.0 {
                continue;
            }
            let old = beta[j];
            let rho = x.column(j).dot(&residual) / n + norms[j] * old;
            let new = soft_threshold(rho, lambda) / norms[j];
            if new != old {
                residual.axpy(old - new, &x.column(j).clone_owned(), 1.0);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change <= LASSO_TOLERANCE {
            break;
        }
    }
    beta
}

/// One response's stage-2 outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseFit {
    pub response: String,
    /// Full lasso path record (coefficients aligned with the screened
    /// column order).
    pub fit: LassoFit,
    /// Original predictor indices with nonzero coefficients at the
    /// BIC-selected penalty, ascending.
    pub support: Vec<usize>,
    /// (1/n) RSS of the least-squares refit on `support` (the reported
    /// model RSS; the intercept-only value when the support is empty).
    pub rss: f64,
    /// Support size chosen by BIC.
    pub df: usize,
}

/// Outcome of the two-stage pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStageResult {
    pub method: Method,
    pub screen_size: usize,
    /// Screened predictor indices, ascending.
    pub screened: Vec<usize>,
    pub responses: Vec<ResponseFit>,
}

/// Screens to the top-s predictors with the given marginal method, then
/// fits a lasso path response by response on the screened columns and
/// picks each model by BIC. Reported RSS comes from the least-squares
/// refit on the selected support (coefficients in `fit` stay penalized).
pub fn two_stage(data: &Dataset, method: Method, s: usize) -> Result<TwoStageResult> {
    if s == 0 || s > data.p() {
        return Err(Error::InvalidInput(format!(
            "stage-1 size {s} must lie in 1..={}",
            data.p()
        )));
    }
    let data = data.standardize()?;
    let statistics = match method {
        Method::Melsis => screening::melsis_statistics(&data)?,
        Method::ElsisAvg => screening::elsis_avg_statistics(&data)?,
        Method::ElsisMax => screening::elsis_max_statistics(&data)?,
        Method::Cmelsis => {
            return Err(Error::InvalidInput(
                "two-stage screening uses a marginal method".into(),
            ))
        }
    };
    let mut screened: Vec<usize> = screening::rank_predictors(&statistics.values)[..s].to_vec();
    screened.sort_unstable();
    let x_sub = DMatrix::from_fn(data.n(), s, |i, k| data.x()[(i, screened[k])]);
    let responses: Vec<ResponseFit> = (0..data.q())
        .into_par_iter()
        .map(|k| {
            let n = data.n() as f64;
            let raw = data.y().column(k);
            let mean = raw.sum() / n;
            let y = DVector::from_fn(data.n(), |i, _| raw[i] - mean);
            let fit = lasso_path_bic(&x_sub, &y);
            let support_cols: Vec<usize> = fit.coefficients[fit.selected_index]
                .iter()
                .enumerate()
                .filter(|(_, &b)| b != 0.0)
                .map(|(j, _)| j)
                .collect();
            let rss = refit_rss(&x_sub, &y, &support_cols);
            ResponseFit {
                response: data.response_names()[k].clone(),
                support: support_cols.iter().map(|&j| screened[j]).collect(),
                df: support_cols.len(),
                rss,
                fit,
            }
        })
        .collect();
    Ok(TwoStageResult {
        method,
        screen_size: s,
        screened,
        responses,
    })
}

/// (1/n) RSS of an OLS refit of `y` on the given columns (empty support
/// gives the intercept-only value; `y` arrives centered).
fn refit_rss(x: &DMatrix<f64>, y: &DVector<f64>, cols: &[usize]) -> f64 {
    let n = x.nrows() as f64;
    if cols.is_empty() {
        return y.norm_squared() / n;
    }
    let sub = DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])]);
    let gram = sub.transpose() * &sub;
    let rhs = sub.transpose() * y;
    let trace = gram.trace().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    let beta = loop {
        let mut shifted = gram.clone();
        for d in 0..shifted.nrows() {
            shifted[(d, d)] += ridge;
        }
        match shifted.cholesky() {
            Some(chol) => break chol.solve(&rhs),
            None if ridge < 1e-6 * trace => {
                ridge = if ridge == 0.0 { 1e-12 * trace } else { ridge * 10.0 };
            }
            // A rank-deficient support still has a well-defined fit via the
            // heavily ridged system; RSS is what matters downstream.
            None => break DVector::zeros(cols.len()),
        }
    };
    (y - sub * beta).norm_squared() / n
}
