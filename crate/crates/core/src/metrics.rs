//! Evaluation metric and residual pooling.

use nalgebra::DVector;
use thiserror::Error;

use crate::fitter::FitResult;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least one sample")]
    Empty,
    #[error("sample {sample}: expected length {expected}, got {got}")]
    DimensionMismatch {
        sample: usize,
        expected: usize,
        got: usize,
    },
    #[error("sample length {got} is not a multiple of 2")]
    OddLength { got: usize },
}

/// Mean Euclidean Metric over N landmark sets:
///
/// ```text
/// MEM = sqrt( (1/N) * sum_i sum_j || g_ij - r_ij ||^2 )
/// ```
///
/// The inner sum over landmarks is not averaged; divide by the landmark
/// count afterwards if a per-landmark figure is wanted.
pub fn mem(ground_truth: &[DVector<f64>], estimated: &[DVector<f64>]) -> Result<f64, MetricsError> {
    if ground_truth.is_empty() || estimated.is_empty() {
        return Err(MetricsError::Empty);
    }
    if ground_truth.len() != estimated.len() {
        return Err(MetricsError::DimensionMismatch {
            sample: 0,
            expected: ground_truth.len(),
            got: estimated.len(),
        });
    }
    let width = ground_truth[0].len();
    if width % 2 != 0 {
        return Err(MetricsError::OddLength { got: width });
    }
    let mut total = 0.0;
    for (sample, (g, r)) in ground_truth.iter().zip(estimated.iter()).enumerate() {
        if g.len() != width {
            return Err(MetricsError::DimensionMismatch {
                sample,
                expected: width,
                got: g.len(),
            });
        }
        if r.len() != width {
            return Err(MetricsError::DimensionMismatch {
                sample,
                expected: width,
                got: r.len(),
            });
        }
        total += (g - r).norm_squared();
    }
    Ok((total / ground_truth.len() as f64).sqrt())
}

/// Pools per-landmark residual vectors of several fits into a row-per-fit
/// table with one column per coordinate (2L columns).
pub fn residual_scatter(results: &[FitResult]) -> Result<Vec<Vec<f64>>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let width = results[0].per_landmark_residuals.len();
    let mut rows = Vec::with_capacity(results.len());
    for (sample, result) in results.iter().enumerate() {
        if result.per_landmark_residuals.len() != width {
            return Err(MetricsError::DimensionMismatch {
                sample,
                expected: width,
                got: result.per_landmark_residuals.len(),
            });
        }
        rows.push(result.per_landmark_residuals.iter().copied().collect());
    }
    Ok(rows)
}
