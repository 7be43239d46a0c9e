//! C ABI for the elscreen library.
//!
//! Conventions shared by every entry point:
//!
//! * Matrices cross the boundary as row-major `double` buffers; an n x p
//!   predictor block stores observation `i`, column `j` at `x[i*p + j]`.
//! * Functions that can fail return [`ElsStatus`]; `ELS_OK` is zero.
//!   Outputs are written only on `ELS_OK`.
//! * On failure the message of the most recent failing call on the
//!   current thread is available through [`els_last_error_message`].
//! * Datasets are opaque handles created by [`els_dataset_new`] and
//!   released by [`els_dataset_free`]. Handles are never mutated, so one
//!   handle may be shared across threads for concurrent screening calls.
//! * Panics never unwind across the boundary; they surface as
//!   `ELS_PANIC` with the panic payload as the error message.
//!
//! The generated header lives at `include/elscreen.h`.

use std::cell::RefCell;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use elscreen::conditional::{self, ConditioningSpec};
use elscreen::dataset::Dataset;
use elscreen::el::{el_ratio_at_zero, EstimatingMatrix};
use elscreen::error::Error;
use elscreen::screening::{
    elsis_avg_statistics, elsis_max_statistics, hard_threshold_size, melsis_statistics,
    rank_predictors,
};
use nalgebra::DMatrix;

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElsStatus {
    /// Success; output parameters are valid.
    ElsOk = 0,
    /// A required pointer argument was null.
    ElsNullPointer = 1,
    /// Input failed a structural precondition (dimensions, finiteness,
    /// index ranges).
    ElsInvalidInput = 2,
    /// Zero lies outside the convex hull of the estimating rows, so the
    /// empirical likelihood is undefined at zero.
    ElsHullViolation = 3,
    /// An iterative computation broke down numerically.
    ElsNumericalFailure = 4,
    /// An internal panic was caught at the boundary.
    ElsPanic = 5,
}

/// Screening statistic selector for [`els_screen_statistics`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElsMethod {
    /// Joint multivariate EL statistic across all responses.
    ElsMethodMelsis = 0,
    /// Mean of the per-response univariate EL statistics.
    ElsMethodElsisAvg = 1,
    /// Maximum of the per-response univariate EL statistics.
    ElsMethodElsisMax = 2,
}

/// Opaque dataset handle; create with [`els_dataset_new`], release with
/// [`els_dataset_free`].
pub struct ElsDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_last_error(message: &str) {
    LAST_ERROR.with(|slot| {
        let mut buf = slot.borrow_mut();
        buf.clear();
        // NUL bytes would truncate the C string early; strip them.
        buf.extend(message.bytes().filter(|&b| b != 0));
        buf.push(0);
    });
}

fn status_of(err: &Error) -> ElsStatus {
    match err {
        Error::HullViolation => ElsStatus::ElsHullViolation,
        Error::InvalidInput(_)
        | Error::DimensionMismatch(_)
        | Error::NotPsd { .. }
        | Error::MissingActive { .. }
        | Error::Parse { .. } => ElsStatus::ElsInvalidInput,
        Error::Predictor { source, .. } => status_of(source),
        Error::NumericalFailure(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => {
            ElsStatus::ElsNumericalFailure
        }
    }
}

fn fail(err: &Error) -> ElsStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn null_pointer(what: &str) -> ElsStatus {
    set_last_error(&format!("{what} must not be null"));
    ElsStatus::ElsNullPointer
}

/// Runs `body` with panics converted to `ELS_PANIC`.
fn guarded(body: impl FnOnce() -> ElsStatus) -> ElsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            ElsStatus::ElsPanic
        }
    }
}

/// Builds a row-major matrix from a C buffer, rejecting non-finite sizes.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles.
unsafe fn matrix_from_raw(data: *const f64, rows: usize, cols: usize) -> DMatrix<f64> {
    let values = slice::from_raw_parts(data, rows * cols);
    DMatrix::from_row_slice(rows, cols, values)
}

/// Creates a dataset from row-major predictor and response blocks.
///
/// `x` holds `n * p` doubles (observation-major), `y` holds `n * q`
/// doubles. The handle copies both blocks, so the buffers may be freed
/// immediately after the call. Requires `n >= 3`, `p >= 1`, `q >= 1`,
/// and finite entries.
///
/// # Safety
/// `x` and `y` must point to buffers of the stated sizes, and `out` must
/// be a valid location for one pointer.
#[no_mangle]
pub unsafe extern "C" fn els_dataset_new(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    q: usize,
    out: *mut *mut ElsDataset,
) -> ElsStatus {
    guarded(|| {
        if out.is_null() {
            return null_pointer("out");
        }
        if x.is_null() {
            return null_pointer("x");
        }
        if y.is_null() {
            return null_pointer("y");
        }
        if n == 0 || p == 0 || q == 0 {
            set_last_error("n, p and q must all be positive");
            return ElsStatus::ElsInvalidInput;
        }
        if n.checked_mul(p).is_none() || n.checked_mul(q).is_none() {
            set_last_error("n * p or n * q overflows");
            return ElsStatus::ElsInvalidInput;
        }
        let xm = matrix_from_raw(x, n, p);
        let ym = matrix_from_raw(y, n, q);
        match Dataset::from_matrices(xm, ym) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ElsDataset { inner }));
                ElsStatus::ElsOk
            }
            Err(err) => fail(&err),
        }
    })
}

/// Releases a dataset handle. A null handle is a no-op.
///
/// # Safety
/// `dataset` must be null or a pointer returned by [`els_dataset_new`]
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn els_dataset_free(dataset: *mut ElsDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of observations in the dataset, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn els_dataset_n(dataset: *const ElsDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n())
}

/// Number of predictors in the dataset, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn els_dataset_p(dataset: *const ElsDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.p())
}

/// Number of responses in the dataset, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn els_dataset_q(dataset: *const ElsDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.q())
}

/// Computes marginal screening statistics for every predictor.
///
/// Writes one statistic per predictor into `out_values` (length `p`,
/// aligned with predictor indices). Predictors whose solve fails get the
/// screening convention value 0. Larger is better; rank with
/// [`els_rank_predictors`].
///
/// # Safety
/// `dataset` must be a live handle and `out_values` must point to `p`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn els_screen_statistics(
    dataset: *const ElsDataset,
    method: ElsMethod,
    out_values: *mut f64,
) -> ElsStatus {
    guarded(|| {
        let Some(handle) = dataset.as_ref() else {
            return null_pointer("dataset");
        };
        if out_values.is_null() {
            return null_pointer("out_values");
        }
        let computed = match method {
            ElsMethod::ElsMethodMelsis => melsis_statistics(&handle.inner),
            ElsMethod::ElsMethodElsisAvg => elsis_avg_statistics(&handle.inner),
            ElsMethod::ElsMethodElsisMax => elsis_max_statistics(&handle.inner),
        };
        match computed {
            Ok(stats) => {
                let out = slice::from_raw_parts_mut(out_values, handle.inner.p());
                out.copy_from_slice(&stats.values);
                ElsStatus::ElsOk
            }
            Err(err) => fail(&err),
        }
    })
}

/// Computes conditional screening statistics given a conditioning set.
///
/// `cond` lists 0-based predictor indices (strictly increasing after
/// sorting, no duplicates, not covering every predictor). Writes one
/// value per predictor into `out_values` (length `p`): conditioned
/// predictors get NaN, targets get their conditional statistic, and
/// targets whose centralization or solve failed get 0.
///
/// # Safety
/// `dataset` must be a live handle, `cond` must point to `cond_len`
/// readable indices, and `out_values` must point to `p` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn els_conditional_statistics(
    dataset: *const ElsDataset,
    cond: *const usize,
    cond_len: usize,
    out_values: *mut f64,
) -> ElsStatus {
    guarded(|| {
        let Some(handle) = dataset.as_ref() else {
            return null_pointer("dataset");
        };
        if cond.is_null() {
            return null_pointer("cond");
        }
        if out_values.is_null() {
            return null_pointer("out_values");
        }
        let cond_set = slice::from_raw_parts(cond, cond_len).to_vec();
        let spec = ConditioningSpec::new(cond_set);
        if let Err(err) = spec.validate(handle.inner.p()) {
            return fail(&err);
        }
        match conditional::cmelsis_statistics(&handle.inner, &spec) {
            Ok(screen) => {
                let out = slice::from_raw_parts_mut(out_values, handle.inner.p());
                out.fill(f64::NAN);
                for (k, &j) in screen.targets.iter().enumerate() {
                    out[j] = screen.statistics[k];
                }
                ElsStatus::ElsOk
            }
            Err(err) => fail(&err),
        }
    })
}

/// Orders predictor indices by decreasing statistic value.
///
/// Ties break toward the smaller index. Values compare by the IEEE 754
/// total order, descending, so a positive NaN sorts before every finite
/// value; screening statistics themselves are always finite (failed
/// solves yield 0). Writes `len` indices into `out_order`.
///
/// # Safety
/// `values` must point to `len` readable doubles and `out_order` to
/// `len` writable `size_t`s.
#[no_mangle]
pub unsafe extern "C" fn els_rank_predictors(
    values: *const f64,
    len: usize,
    out_order: *mut usize,
) -> ElsStatus {
    guarded(|| {
        if values.is_null() {
            return null_pointer("values");
        }
        if out_order.is_null() {
            return null_pointer("out_order");
        }
        let ranking = rank_predictors(slice::from_raw_parts(values, len));
        slice::from_raw_parts_mut(out_order, len).copy_from_slice(&ranking);
        ElsStatus::ElsOk
    })
}

/// Model size of the hard threshold rule: round(c * floor(n / ln n)).
///
/// The formula is applied verbatim; degenerate scale factors can yield
/// zero. Returns 0 when `c` is not a positive finite number or `n < 2`.
#[no_mangle]
pub extern "C" fn els_hard_threshold_size(n: usize, c: f64) -> usize {
    if !(c.is_finite() && c > 0.0) || n < 2 {
        return 0;
    }
    hard_threshold_size(n, c)
}

/// Evaluates the adjusted empirical-likelihood ratio at zero for a
/// row-major n x q estimating matrix.
///
/// Writes the nonnegative statistic into `out_ratio`. Requires at least
/// two rows, `q >= 1`, and finite entries.
///
/// # Safety
/// `g` must point to `n * q` readable doubles and `out_ratio` to one
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn els_el_ratio(
    g: *const f64,
    n: usize,
    q: usize,
    out_ratio: *mut f64,
) -> ElsStatus {
    guarded(|| {
        if g.is_null() {
            return null_pointer("g");
        }
        if out_ratio.is_null() {
            return null_pointer("out_ratio");
        }
        if n == 0 || q == 0 || n.checked_mul(q).is_none() {
            set_last_error("n and q must be positive and n * q must not overflow");
            return ElsStatus::ElsInvalidInput;
        }
        let rows = matrix_from_raw(g, n, q);
        let matrix = match EstimatingMatrix::new(rows) {
            Ok(m) => m,
            Err(err) => return fail(&err),
        };
        match el_ratio_at_zero(&matrix) {
            Ok(solution) => {
                *out_ratio = solution.ratio;
                ElsStatus::ElsOk
            }
            Err(err) => fail(&err),
        }
    })
}

/// Copies the most recent error message of this thread into `buf`.
///
/// Returns the full message length including the trailing NUL; the copy
/// is truncated (but still NUL-terminated) when `len` is smaller.
/// Returns 0 when no call on this thread has failed yet.
///
/// # Safety
/// `buf` must be null (to query the length) or point to `len` writable
/// bytes.
#[no_mangle]
pub unsafe extern "C" fn els_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        if message.is_empty() {
            return 0;
        }
        if !buf.is_null() && len > 0 {
            let copy = message.len().min(len - 1);
            ptr::copy_nonoverlapping(message.as_ptr() as *const c_char, buf, copy);
            *buf.add(copy) = 0;
        }
        message.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn els_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error_text() -> String {
        LAST_ERROR.with(|slot| {
            let buf = slot.borrow();
            assert_eq!(buf.last(), Some(&0), "message must be NUL-terminated");
            String::from_utf8(buf[..buf.len() - 1].to_vec()).unwrap()
        })
    }

    #[test]
    fn guarded_converts_string_panics() {
        let status = guarded(|| panic!("boom {}", 7));
        assert_eq!(status, ElsStatus::ElsPanic);
        assert!(last_error_text().contains("boom 7"));
    }

    #[test]
    fn guarded_handles_non_string_payloads() {
        let status = guarded(|| std::panic::panic_any(42_i32));
        assert_eq!(status, ElsStatus::ElsPanic);
        assert!(last_error_text().contains("unknown panic"));
    }

    #[test]
    fn interior_nuls_are_stripped_from_messages() {
        set_last_error("a\0b");
        assert_eq!(last_error_text(), "ab");
    }

    #[test]
    fn status_mapping_covers_error_kinds() {
        assert_eq!(status_of(&Error::HullViolation), ElsStatus::ElsHullViolation);
        assert_eq!(
            status_of(&Error::InvalidInput("x".into())),
            ElsStatus::ElsInvalidInput
        );
        assert_eq!(
            status_of(&Error::DimensionMismatch("x".into())),
            ElsStatus::ElsInvalidInput
        );
        assert_eq!(
            status_of(&Error::NumericalFailure("x".into())),
            ElsStatus::ElsNumericalFailure
        );
        let wrapped = Error::Predictor {
            index: 3,
            source: Box::new(Error::HullViolation),
        };
        assert_eq!(status_of(&wrapped), ElsStatus::ElsHullViolation);
    }
}
