//! Residual-weighted alternating model fitting.
//!
//! Each iteration estimates a weak-perspective pose, optionally re-selects
//! contour vertex correspondences by back projection, solves expression and
//! identity coefficients in closed form under a weighted least-squares
//! objective with a PCA-prior ridge term, and then updates the per-landmark
//! weights from the current reprojection distances:
//!
//! ```text
//! w_i = (d_i + xi1) / xi2
//! ```
//!
//! so landmarks that match poorly get pulled in harder on the next pass. With
//! weighting disabled the loop reduces to the plain unweighted baseline.

use nalgebra::{Cholesky, DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{estimate_pose, project, Pose, PoseError};
use crate::model::{landmark_rows, ModelError, MorphableModel, ShapeCoefficients};

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("weight constants must be positive, got xi1 = {xi1}, xi2 = {xi2}")]
    InvalidXi { xi1: f64, xi2: f64 },
    #[error("residual distance {index} must be finite and >= 0, got {value}")]
    InvalidDistance { index: usize, value: f64 },
    #[error("weight {index} must be positive and finite, got {value}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("standard deviation {index} must be positive and finite, got {value}")]
    InvalidStddev { index: usize, value: f64 },
    #[error("regularization weight must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("invalid fit config: {reason}")]
    InvalidConfig { reason: String },
    #[error("normal matrix is singular; increase lambda or reduce the basis")]
    SingularNormalMatrix,
    #[error("contour re-correspondence requested but the model has no candidate lists")]
    MissingContourCandidates,
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<FitError>,
    },
}

/// Per-landmark reprojection distances and the weights derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    /// Euclidean reprojection distance per landmark, pixels.
    pub distances: DVector<f64>,
    /// Dimensionless fitting weight per landmark.
    pub weights: DVector<f64>,
}

/// Knobs of the fitting loop. `Default` gives the cross-validated weight
/// constants (xi1 = 3, xi2 = 3.5), unit ridge weights, 50 iterations, and a
/// half-pixel convergence threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub xi1: f64,
    pub xi2: f64,
    pub lambda_id: f64,
    pub lambda_exp: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the stacked landmark error norm, pixels.
    pub tau: f64,
    /// Stop when the relative error decrease falls below this floor.
    pub min_rel_improvement: f64,
    /// `false` reproduces the unweighted baseline.
    pub weighting_enabled: bool,
    pub contour_recorrespond_enabled: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            xi1: 3.0,
            xi2: 3.5,
            lambda_id: 1.0,
            lambda_exp: 1.0,
            max_iterations: 50,
            tau: 0.5,
            min_rel_improvement: 1e-6,
            weighting_enabled: true,
            contour_recorrespond_enabled: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let fail = |reason: String| Err(FitError::InvalidConfig { reason });
        if !(self.xi1.is_finite() && self.xi1 > 0.0 && self.xi2.is_finite() && self.xi2 > 0.0) {
            return fail(format!("xi1 ({}) and xi2 ({}) must be > 0", self.xi1, self.xi2));
        }
        if !(self.lambda_id.is_finite() && self.lambda_id >= 0.0) {
            return fail(format!("lambda_id must be >= 0, got {}", self.lambda_id));
        }
        if !(self.lambda_exp.is_finite() && self.lambda_exp >= 0.0) {
            return fail(format!("lambda_exp must be >= 0, got {}", self.lambda_exp));
        }
        if self.max_iterations < 1 {
            return fail("max_iterations must be >= 1".to_string());
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return fail(format!("tau must be >= 0, got {}", self.tau));
        }
        if !self.min_rel_improvement.is_finite() {
            return fail(format!(
                "min_rel_improvement must be finite, got {}",
                self.min_rel_improvement
            ));
        }
        Ok(())
    }
}

/// Outcome of [`fit`]: the best iterate seen, its weights and residuals, and
/// the per-iteration error trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub pose: Pose,
    pub coeffs: ShapeCoefficients,
    /// Weight state after the last iteration's update.
    pub final_weights: WeightState,
    /// Stacked landmark error norm per iteration.
    pub error_trace: Vec<f64>,
    /// observed - projected, interleaved (x, y) per landmark, for the
    /// reported iterate.
    pub per_landmark_residuals: DVector<f64>,
    /// Landmark vertex indices in effect for the reported iterate (differs
    /// from the model's only when contour re-correspondence ran).
    pub landmark_indices: Vec<usize>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl FitResult {
    /// Landmark error norm of the reported iterate.
    pub fn best_error(&self) -> f64 {
        self.per_landmark_residuals.norm()
    }
}

/// Per-landmark Euclidean distances between two interleaved 2D point vectors.
pub fn residual_distances(
    observed2d: &DVector<f64>,
    projected2d: &DVector<f64>,
) -> Result<DVector<f64>, FitError> {
    if observed2d.len() != projected2d.len() {
        return Err(FitError::DimensionMismatch {
            what: "projected2d",
            expected: observed2d.len(),
            got: projected2d.len(),
        });
    }
    if observed2d.len() % 2 != 0 {
        return Err(FitError::DimensionMismatch {
            what: "observed2d (multiple of 2)",
            expected: observed2d.len() / 2 * 2,
            got: observed2d.len(),
        });
    }
    let count = observed2d.len() / 2;
    Ok(DVector::from_fn(count, |i, _| {
        let dx = observed2d[2 * i] - projected2d[2 * i];
        let dy = observed2d[2 * i + 1] - projected2d[2 * i + 1];
        (dx * dx + dy * dy).sqrt()
    }))
}

/// Affine weight rule: `w_i = (d_i + xi1) / xi2`, applied exactly.
pub fn update_weights(
    distances: &DVector<f64>,
    xi1: f64,
    xi2: f64,
) -> Result<WeightState, FitError> {
    if !(xi1.is_finite() && xi1 > 0.0 && xi2.is_finite() && xi2 > 0.0) {
        return Err(FitError::InvalidXi { xi1, xi2 });
    }
    for (index, &value) in distances.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(FitError::InvalidDistance { index, value });
        }
    }
    Ok(WeightState {
        distances: distances.clone(),
        weights: distances.map(|d| (d + xi1) / xi2),
    })
}

/// Closed-form regularized weighted coefficient solve.
///
/// Returns the unique minimizer of
///
/// ```text
/// || W_hat (observed2d - P (fixed_offset3d + basis * alpha)) ||^2
///     + lambda * alpha^T C alpha
/// ```
///
/// where `P` is the 2x3 weak-perspective projection of `pose` applied per
/// landmark (the pose translation is NOT applied here; fold it into
/// `fixed_offset3d`), `W_hat` repeats each landmark weight over both of its
/// coordinates, and `C = diag(1 / stddev_j)`. Solved through the symmetric
/// positive definite normal equations by Cholesky factorization.
pub fn solve_coefficients(
    basis: &DMatrix<f64>,
    stddevs: &DVector<f64>,
    pose: &Pose,
    fixed_offset3d: &DVector<f64>,
    observed2d: &DVector<f64>,
    weights: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>, FitError> {
    let (g, wy) = weighted_design(basis, stddevs, pose, fixed_offset3d, observed2d, weights, lambda)?;
    let columns = basis.ncols();
    let mut normal = g.tr_mul(&g);
    for j in 0..columns {
        normal[(j, j)] += lambda / stddevs[j];
    }
    let rhs = g.tr_mul(&wy);
    let chol = Cholesky::new(normal).ok_or(FitError::SingularNormalMatrix)?;
    // Cholesky can still "succeed" on a numerically singular matrix; a pivot
    // ratio of sqrt(machine epsilon) marks rank deficiency.
    let diag = chol.l_dirty().diagonal();
    let max_pivot = diag.iter().fold(0.0f64, |m, &x| m.max(x));
    let min_pivot = diag.iter().fold(f64::MAX, |m, &x| m.min(x));
    if !(min_pivot.is_finite() && min_pivot > 1e-7 * max_pivot) {
        return Err(FitError::SingularNormalMatrix);
    }
    Ok(chol.solve(&rhs))
}

/// Evaluates the objective minimized by [`solve_coefficients`] at `alpha`.
pub fn objective(
    basis: &DMatrix<f64>,
    stddevs: &DVector<f64>,
    pose: &Pose,
    fixed_offset3d: &DVector<f64>,
    observed2d: &DVector<f64>,
    weights: &DVector<f64>,
    lambda: f64,
    alpha: &DVector<f64>,
) -> Result<f64, FitError> {
    if alpha.len() != basis.ncols() {
        return Err(FitError::DimensionMismatch {
            what: "alpha",
            expected: basis.ncols(),
            got: alpha.len(),
        });
    }
    if !alpha.iter().all(|x| x.is_finite()) {
        return Err(FitError::NonFinite { what: "alpha" });
    }
    let (g, wy) = weighted_design(basis, stddevs, pose, fixed_offset3d, observed2d, weights, lambda)?;
    let residual = &wy - &g * alpha;
    let mut value = residual.norm_squared();
    for j in 0..alpha.len() {
        value += lambda * alpha[j] * alpha[j] / stddevs[j];
    }
    Ok(value)
}

/// Builds `G = W_hat P basis` and `wy = W_hat (observed - P fixed)` after
/// validating every input.
fn weighted_design(
    basis: &DMatrix<f64>,
    stddevs: &DVector<f64>,
    pose: &Pose,
    fixed_offset3d: &DVector<f64>,
    observed2d: &DVector<f64>,
    weights: &DVector<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, DVector<f64>), FitError> {
    let count = weights.len();
    if basis.nrows() != 3 * count {
        return Err(FitError::DimensionMismatch {
            what: "basis rows",
            expected: 3 * count,
            got: basis.nrows(),
        });
    }
    if fixed_offset3d.len() != 3 * count {
        return Err(FitError::DimensionMismatch {
            what: "fixed_offset3d",
            expected: 3 * count,
            got: fixed_offset3d.len(),
        });
    }
    if observed2d.len() != 2 * count {
        return Err(FitError::DimensionMismatch {
            what: "observed2d",
            expected: 2 * count,
            got: observed2d.len(),
        });
    }
    if stddevs.len() != basis.ncols() {
        return Err(FitError::DimensionMismatch {
            what: "stddevs",
            expected: basis.ncols(),
            got: stddevs.len(),
        });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(FitError::InvalidLambda(lambda));
    }
    for (index, &value) in stddevs.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(FitError::InvalidStddev { index, value });
        }
    }
    for (index, &value) in weights.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(FitError::InvalidWeight { index, value });
        }
    }
    if !basis.iter().all(|x| x.is_finite()) {
        return Err(FitError::NonFinite { what: "basis" });
    }
    if !fixed_offset3d.iter().all(|x| x.is_finite()) {
        return Err(FitError::NonFinite {
            what: "fixed_offset3d",
        });
    }
    if !observed2d.iter().all(|x| x.is_finite()) {
        return Err(FitError::NonFinite { what: "observed2d" });
    }
    pose.validate()?;

    let r = &pose.rotation;
    let f = pose.scale;
    let columns = basis.ncols();
    let mut g = DMatrix::zeros(2 * count, columns);
    let mut wy = DVector::zeros(2 * count);
    for i in 0..count {
        let w = weights[i];
        for j in 0..columns {
            let b0 = basis[(3 * i, j)];
            let b1 = basis[(3 * i + 1, j)];
            let b2 = basis[(3 * i + 2, j)];
            g[(2 * i, j)] = w * f * (r[(0, 0)] * b0 + r[(0, 1)] * b1 + r[(0, 2)] * b2);
            g[(2 * i + 1, j)] = w * f * (r[(1, 0)] * b0 + r[(1, 1)] * b1 + r[(1, 2)] * b2);
        }
        let p = Vector3::new(
            fixed_offset3d[3 * i],
            fixed_offset3d[3 * i + 1],
            fixed_offset3d[3 * i + 2],
        );
        let projected = r * p;
        wy[2 * i] = w * (observed2d[2 * i] - f * projected.x);
        wy[2 * i + 1] = w * (observed2d[2 * i + 1] - f * projected.y);
    }
    Ok((g, wy))
}

/// Re-selects contour landmark vertices by back projection: for each contour
/// slot the candidate vertex whose projection lies nearest to the observed
/// landmark wins. Non-contour slots keep the model's nominal vertex.
pub fn contour_recorrespond(
    model: &MorphableModel,
    current_shape3d: &DVector<f64>,
    pose: &Pose,
    observed2d: &DVector<f64>,
) -> Result<Vec<usize>, FitError> {
    let candidates = model
        .contour_candidates
        .as_ref()
        .ok_or(FitError::MissingContourCandidates)?;
    if current_shape3d.len() != 3 * model.n_vertices {
        return Err(FitError::DimensionMismatch {
            what: "current_shape3d",
            expected: 3 * model.n_vertices,
            got: current_shape3d.len(),
        });
    }
    if observed2d.len() != 2 * model.n_landmarks() {
        return Err(FitError::DimensionMismatch {
            what: "observed2d",
            expected: 2 * model.n_landmarks(),
            got: observed2d.len(),
        });
    }
    pose.validate()?;

    let mut indices = model.landmark_indices.clone();
    for (&slot, list) in candidates {
        if list.is_empty() {
            return Err(FitError::Model(ModelError::EmptyContourCandidates { slot }));
        }
        let target_x = observed2d[2 * slot];
        let target_y = observed2d[2 * slot + 1];
        let mut best = (f64::INFINITY, list[0]);
        for &vertex in list {
            let p = Vector3::new(
                current_shape3d[3 * vertex],
                current_shape3d[3 * vertex + 1],
                current_shape3d[3 * vertex + 2],
            );
            let q = pose.project_point(&p);
            let dist = (q.x - target_x).powi(2) + (q.y - target_y).powi(2);
            if dist < best.0 {
                best = (dist, vertex);
            }
        }
        indices[slot] = best.1;
    }
    Ok(indices)
}

/// Projects the model's landmarks at `indices` under `pose` for a given
/// coefficient vector (the fit's notion of "estimated landmark positions").
pub fn project_model_landmarks(
    model: &MorphableModel,
    coeffs: &ShapeCoefficients,
    pose: &Pose,
    indices: &[usize],
) -> Result<DVector<f64>, FitError> {
    let restricted = LandmarkRestriction::gather(model, indices)?;
    let points3d = restricted.points3d(&coeffs.alpha_id, &coeffs.alpha_exp);
    Ok(project(&points3d, pose)?)
}

/// Landmark-row restriction of the model for one index set.
struct LandmarkRestriction {
    mean: DVector<f64>,
    id: DMatrix<f64>,
    exp: DMatrix<f64>,
}

impl LandmarkRestriction {
    fn gather(model: &MorphableModel, indices: &[usize]) -> Result<Self, ModelError> {
        let mean_matrix = DMatrix::from_column_slice(model.mean_shape.len(), 1, model.mean_shape.as_slice());
        Ok(Self {
            mean: DVector::from_column_slice(landmark_rows(&mean_matrix, indices)?.as_slice()),
            id: landmark_rows(&model.id_basis, indices)?,
            exp: landmark_rows(&model.exp_basis, indices)?,
        })
    }

    fn points3d(&self, alpha_id: &DVector<f64>, alpha_exp: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.id * alpha_id + &self.exp * alpha_exp
    }

    /// Mean plus one basis contribution plus the pose translation tiled per
    /// landmark: the fixed part of the projection when solving for the other
    /// basis's coefficients.
    fn fixed_offset(
        &self,
        basis: &DMatrix<f64>,
        alpha: &DVector<f64>,
        translation: &Vector3<f64>,
    ) -> DVector<f64> {
        let mut fixed = &self.mean + basis * alpha;
        for i in 0..fixed.len() / 3 {
            fixed[3 * i] += translation.x;
            fixed[3 * i + 1] += translation.y;
            fixed[3 * i + 2] += translation.z;
        }
        fixed
    }
}

struct BestIterate {
    error: f64,
    pose: Pose,
    alpha_id: DVector<f64>,
    alpha_exp: DVector<f64>,
    residuals: DVector<f64>,
    indices: Vec<usize>,
}

/// Runs the full alternating fit against observed 2D landmarks.
///
/// Per iteration: weighted pose estimation, optional contour
/// re-correspondence, expression solve with identity fixed, identity solve
/// with expression fixed, residual computation, weight update. Stops when the
/// landmark error norm drops below `tau`, when the relative improvement falls
/// below the configured floor, or after `max_iterations`; the best-error
/// iterate is reported.
pub fn fit(
    model: &MorphableModel,
    observed2d: &DVector<f64>,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    model.validate()?;
    config.validate()?;
    let count = model.n_landmarks();
    if observed2d.len() != 2 * count {
        return Err(FitError::DimensionMismatch {
            what: "observed2d",
            expected: 2 * count,
            got: observed2d.len(),
        });
    }
    if !observed2d.iter().all(|x| x.is_finite()) {
        return Err(FitError::NonFinite { what: "observed2d" });
    }
    if config.contour_recorrespond_enabled && model.contour_candidates.is_none() {
        return Err(FitError::MissingContourCandidates);
    }

    let mut indices = model.landmark_indices.clone();
    let mut restricted = LandmarkRestriction::gather(model, &indices)?;
    let mut alpha_id = DVector::zeros(model.m_id());
    let mut alpha_exp = DVector::zeros(model.k_exp());
    let mut weights = DVector::from_element(count, 1.0);
    let mut last_distances = DVector::zeros(count);

    let mut trace = Vec::with_capacity(config.max_iterations);
    let mut best: Option<BestIterate> = None;
    let mut prev_error = f64::INFINITY;

    for iteration in 0..config.max_iterations {
        let tag = |source: FitError| FitError::AtIteration {
            iteration,
            source: Box::new(source),
        };

        // Pose from the current shape estimate. The squared per-landmark
        // weights make the pose block minimize the same weighted objective
        // as the coefficient solves, where each weight multiplies the
        // residual inside the squared norm.
        let points3d = restricted.points3d(&alpha_id, &alpha_exp);
        let pose_weights = weights.map(|w| w * w);
        let pose = estimate_pose(&points3d, observed2d, &pose_weights).map_err(|e| tag(e.into()))?;

        if config.contour_recorrespond_enabled {
            let shape = crate::model::instantiate_shape(
                model,
                &ShapeCoefficients {
                    alpha_id: alpha_id.clone(),
                    alpha_exp: alpha_exp.clone(),
                },
            )
            .map_err(|e| tag(e.into()))?;
            let new_indices =
                contour_recorrespond(model, &shape, &pose, observed2d).map_err(tag)?;
            if new_indices != indices {
                indices = new_indices;
                restricted = LandmarkRestriction::gather(model, &indices).map_err(|e| tag(e.into()))?;
            }
        }

        // Expression solve with identity fixed, then identity with
        // expression fixed.
        let fixed = restricted.fixed_offset(&restricted.id, &alpha_id, &pose.translation);
        alpha_exp = solve_coefficients(
            &restricted.exp,
            &model.exp_stddev,
            &pose,
            &fixed,
            observed2d,
            &weights,
            config.lambda_exp,
        )
        .map_err(tag)?;

        let fixed = restricted.fixed_offset(&restricted.exp, &alpha_exp, &pose.translation);
        alpha_id = solve_coefficients(
            &restricted.id,
            &model.id_stddev,
            &pose,
            &fixed,
            observed2d,
            &weights,
            config.lambda_id,
        )
        .map_err(tag)?;

        let points3d = restricted.points3d(&alpha_id, &alpha_exp);
        let projected = project(&points3d, &pose).map_err(|e| tag(e.into()))?;
        let distances = residual_distances(observed2d, &projected).map_err(tag)?;
        let error = distances.norm();
        trace.push(error);
        last_distances = distances;

        if best.as_ref().is_none_or(|b| error < b.error) {
            best = Some(BestIterate {
                error,
                pose,
                alpha_id: alpha_id.clone(),
                alpha_exp: alpha_exp.clone(),
                residuals: observed2d - &projected,
                indices: indices.clone(),
            });
        }

        if config.weighting_enabled {
            weights = update_weights(&last_distances, config.xi1, config.xi2)
                .map_err(tag)?
                .weights;
        }

        if error < config.tau {
            break;
        }
        if iteration > 0 {
            if prev_error <= f64::MIN_POSITIVE {
                break;
            }
            if (prev_error - error) / prev_error < config.min_rel_improvement {
                break;
            }
        }
        prev_error = error;
    }

    let best = best.expect("max_iterations >= 1 guarantees one iterate");
    // With weighting enabled this pairs the last distances with the weights
    // updated from them; disabled, the weights are still all ones.
    let final_weights = WeightState {
        distances: last_distances,
        weights,
    };
    let converged = best.error < config.tau;
    Ok(FitResult {
        pose: best.pose,
        coeffs: ShapeCoefficients {
            alpha_id: best.alpha_id,
            alpha_exp: best.alpha_exp,
        },
        final_weights,
        iterations_run: trace.len(),
        error_trace: trace,
        per_landmark_residuals: best.residuals,
        landmark_indices: best.indices,
        converged,
    })
}
