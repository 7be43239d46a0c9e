//! Observed data: an n×p predictor matrix paired with an n×q response matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column means and standard deviations recorded by [`Dataset::standardize`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// A validated dataset. Responses are kept on their original scale; only
/// predictors are standardized, and the screening statistics are invariant
/// to response scaling anyway.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    predictor_names: Vec<String>,
    response_names: Vec<String>,
    standardized: bool,
    standardization: Option<Standardization>,
}

impl Dataset {
    /// Builds a dataset from matrices with the given column names.
    ///
    /// Requires n >= 3 shared rows, p >= 1, q >= 1, finite entries, and name
    /// lists matching the column counts.
    pub fn new(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        predictor_names: Vec<String>,
        response_names: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "predictors have {} rows but responses have {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.nrows() < 3 {
            return Err(Error::InvalidInput(format!(
                "need at least 3 observations, got {}",
                x.nrows()
            )));
        }
        if x.ncols() < 1 || y.ncols() < 1 {
            return Err(Error::InvalidInput(
                "need at least one predictor and one response".into(),
            ));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "dataset contains a non-finite entry".into(),
            ));
        }
        if predictor_names.len() != x.ncols() || response_names.len() != y.ncols() {
            return Err(Error::DimensionMismatch(
                "column-name lists do not match matrix shapes".into(),
            ));
        }
        Ok(Dataset {
            x,
            y,
            predictor_names,
            response_names,
            standardized: false,
            standardization: None,
        })
    }

    /// Builds a dataset with generated names x1..xp / y1..yq.
    pub fn from_matrices(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let pn = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        let rn = (1..=y.ncols()).map(|k| format!("y{k}")).collect();
        Self::new(x, y, pn, rn)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    pub fn response_names(&self) -> &[String] {
        &self.response_names
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Returns a copy whose predictor columns have mean 0 and sample
    /// standard deviation 1 (divisor n-1). Responses are left untouched.
    ///
    /// Errors on constant predictor columns, which cannot be standardized.
    pub fn standardize(&self) -> Result<Dataset> {
        if self.standardized {
            return Ok(self.clone());
        }
        let n = self.n() as f64;
        let mut x = self.x.clone();
        let mut means = Vec::with_capacity(self.p());
        let mut sds = Vec::with_capacity(self.p());
        for j in 0..self.p() {
            let mut col = x.column_mut(j);
            let mean = col.sum() / n;
            col.iter_mut().for_each(|v| *v -= mean);
            let sd = (col.norm_squared() / (n - 1.0)).sqrt();
            if sd <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "predictor column {} is constant and cannot be standardized",
                    j + 1
                )));
            }
            col.iter_mut().for_each(|v| *v /= sd);
            means.push(mean);
            sds.push(sd);
        }
        Ok(Dataset {
            x,
            y: self.y.clone(),
            predictor_names: self.predictor_names.clone(),
            response_names: self.response_names.clone(),
            standardized: true,
            standardization: Some(Standardization { means, sds }),
        })
    }

    /// Returns a copy restricted to the given rows of y (used by the
    /// soft-threshold permutation). Indices must be a permutation of 0..n.
    pub(crate) fn with_permuted_responses(&self, permutation: &[usize]) -> Dataset {
        let y = DMatrix::from_fn(self.y.nrows(), self.y.ncols(), |i, k| {
            self.y[(permutation[i], k)]
        });
        Dataset {
            x: self.x.clone(),
            y,
            predictor_names: self.predictor_names.clone(),
            response_names: self.response_names.clone(),
            standardized: self.standardized,
            standardization: self.standardization.clone(),
        }
    }
}
