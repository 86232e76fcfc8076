//! Weak-perspective camera: projection, closed-form weighted pose estimation,
//! and Euler-angle conversions for reporting.
//!
//! A pose maps a model-space point `v` to the image as
//! `(x, y) = scale * [R (v + t)]_{xy}` — translate in model space, rotate,
//! drop depth, scale. Pose estimation solves the weighted scaled-orthographic
//! Procrustes problem in closed form and projects the result back onto the
//! rotation manifold.

use nalgebra::{DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Orthonormality / determinant tolerance for accepting a rotation matrix.
pub const ROTATION_TOL: f64 = 1e-9;

const GIMBAL_LOCK_TOL: f64 = 1e-7;
const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("rotation is not orthonormal with determinant +1 (deviation {deviation:.3e})")]
    InvalidRotation { deviation: f64 },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("need at least {min} landmarks, got {got}")]
    InsufficientPoints { min: usize, got: usize },
    #[error("weight {index} must be positive and finite, got {value}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("degenerate 3d configuration: weighted point scatter is rank deficient")]
    DegenerateConfiguration,
}

/// Weak-perspective camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// Projection scale (pixels per model unit).
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    /// Model-space translation applied before rotation. Its component along
    /// the viewing axis is unobservable and kept at zero by the estimator.
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(
        scale: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, PoseError> {
        let pose = Self {
            scale,
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Identity camera: unit scale, no rotation, no translation.
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(PoseError::InvalidScale(self.scale));
        }
        if !self.translation.iter().all(|x| x.is_finite()) {
            return Err(PoseError::NonFinite {
                what: "translation",
            });
        }
        if !self.rotation.iter().all(|x| x.is_finite()) {
            return Err(PoseError::NonFinite { what: "rotation" });
        }
        let gram_dev = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        let det_dev = (self.rotation.determinant() - 1.0).abs();
        let deviation = gram_dev.max(det_dev);
        if deviation > ROTATION_TOL {
            return Err(PoseError::InvalidRotation { deviation });
        }
        Ok(())
    }

    /// Projects a single model-space point to the image plane.
    pub fn project_point(&self, point: &Vector3<f64>) -> Vector2<f64> {
        let rotated = self.rotation * (point + self.translation);
        Vector2::new(self.scale * rotated.x, self.scale * rotated.y)
    }
}

/// Euler angles in radians, each in (-pi, pi].
///
/// Convention: `R = Rz(roll) * Ry(yaw) * Rx(pitch)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn from_degrees(pitch: f64, yaw: f64, roll: f64) -> Self {
        Self {
            pitch: pitch.to_radians(),
            yaw: yaw.to_radians(),
            roll: roll.to_radians(),
        }
    }

    pub fn to_rotation(&self) -> Matrix3<f64> {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        let (sr, cr) = self.roll.sin_cos();
        Matrix3::new(
            cr * cy,
            cr * sy * sp - sr * cp,
            cr * sy * cp + sr * sp,
            sr * cy,
            sr * sy * sp + cr * cp,
            sr * sy * cp - cr * sp,
            -sy,
            cy * sp,
            cy * cp,
        )
    }
}

/// Projects interleaved 3D points (length `3L`) to interleaved 2D points
/// (length `2L`) under `pose`.
pub fn project(points3d: &DVector<f64>, pose: &Pose) -> Result<DVector<f64>, PoseError> {
    if points3d.len() % 3 != 0 {
        return Err(PoseError::DimensionMismatch {
            what: "points3d (multiple of 3)",
            expected: points3d.len() / 3 * 3,
            got: points3d.len(),
        });
    }
    if !points3d.iter().all(|x| x.is_finite()) {
        return Err(PoseError::NonFinite { what: "points3d" });
    }
    let count = points3d.len() / 3;
    let mut out = DVector::zeros(2 * count);
    for i in 0..count {
        let p = Vector3::new(points3d[3 * i], points3d[3 * i + 1], points3d[3 * i + 2]);
        let q = pose.project_point(&p);
        out[2 * i] = q.x;
        out[2 * i + 1] = q.y;
    }
    Ok(out)
}

/// Weighted scaled-orthographic Procrustes pose estimation.
///
/// Finds the pose whose projection best explains `points2d` from `points3d`
/// in the weighted least-squares sense: solves the unconstrained 2x3 linear
/// map between the weighted-centered point sets, projects it onto the
/// rotation manifold via an SVD with determinant-sign correction, takes the
/// scale as the mean of the map's two singular values, and picks the
/// translation so the weighted centroids coincide (depth along the viewing
/// axis is set to zero — unobservable under weak perspective).
pub fn estimate_pose(
    points3d: &DVector<f64>,
    points2d: &DVector<f64>,
    weights: &DVector<f64>,
) -> Result<Pose, PoseError> {
    let count = weights.len();
    if count < 4 {
        return Err(PoseError::InsufficientPoints {
            min: 4,
            got: count,
        });
    }
    if points3d.len() != 3 * count {
        return Err(PoseError::DimensionMismatch {
            what: "points3d",
            expected: 3 * count,
            got: points3d.len(),
        });
    }
    if points2d.len() != 2 * count {
        return Err(PoseError::DimensionMismatch {
            what: "points2d",
            expected: 2 * count,
            got: points2d.len(),
        });
    }
    if !points3d.iter().all(|x| x.is_finite()) {
        return Err(PoseError::NonFinite { what: "points3d" });
    }
    if !points2d.iter().all(|x| x.is_finite()) {
        return Err(PoseError::NonFinite { what: "points2d" });
    }
    for (index, &value) in weights.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(PoseError::InvalidWeight { index, value });
        }
    }

    let total_weight: f64 = weights.iter().sum();
    let mut centroid3 = Vector3::zeros();
    let mut centroid2 = Vector2::zeros();
    for i in 0..count {
        let p = Vector3::new(points3d[3 * i], points3d[3 * i + 1], points3d[3 * i + 2]);
        let q = Vector2::new(points2d[2 * i], points2d[2 * i + 1]);
        centroid3 += weights[i] * p;
        centroid2 += weights[i] * q;
    }
    centroid3 /= total_weight;
    centroid2 /= total_weight;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix2x3::zeros();
    for i in 0..count {
        let p = Vector3::new(points3d[3 * i], points3d[3 * i + 1], points3d[3 * i + 2])
            - centroid3;
        let q = Vector2::new(points2d[2 * i], points2d[2 * i + 1]) - centroid2;
        scatter += weights[i] * p * p.transpose();
        cross += weights[i] * q * p.transpose();
    }

    // Invert the scatter through its eigendecomposition so rank deficiency
    // (collinear or coplanar points) is detected explicitly.
    let eigen = scatter.symmetric_eigen();
    let max_eig = eigen.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let min_eig = eigen.eigenvalues.iter().fold(f64::MAX, |m, &x| m.min(x.abs()));
    if max_eig <= 0.0 || min_eig <= 1e-12 * max_eig {
        return Err(PoseError::DegenerateConfiguration);
    }
    let inv_eigenvalues = Vector3::new(
        1.0 / eigen.eigenvalues[0],
        1.0 / eigen.eigenvalues[1],
        1.0 / eigen.eigenvalues[2],
    );
    let scatter_inv =
        &eigen.eigenvectors * Matrix3::from_diagonal(&inv_eigenvalues) * eigen.eigenvectors.transpose();

    // Unconstrained weighted least-squares 2x3 map from centered 3D to 2D.
    let affine = cross * scatter_inv;

    let row_x: Vector3<f64> = affine.row(0).transpose();
    let row_y: Vector3<f64> = affine.row(1).transpose();
    let stacked = Matrix3::from_rows(&[
        affine.row(0).into_owned(),
        affine.row(1).into_owned(),
        row_x.cross(&row_y).transpose(),
    ]);
    let rotation = nearest_rotation(&stacked)?;

    let affine_svd = affine.svd(false, false);
    let scale = 0.5 * (affine_svd.singular_values[0] + affine_svd.singular_values[1]);
    if !(scale.is_finite() && scale > MIN_SCALE) {
        return Err(PoseError::InvalidScale(scale));
    }

    // Translation mapping the weighted centroids onto each other, with zero
    // depth along the viewing axis.
    let rc = rotation * centroid3;
    let camera_offset = Vector3::new(
        centroid2.x / scale - rc.x,
        centroid2.y / scale - rc.y,
        0.0,
    );
    let translation = rotation.transpose() * camera_offset;

    Pose::new(scale, rotation, translation)
}

/// Nearest rotation matrix (Frobenius sense) with determinant +1.
fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>, PoseError> {
    let svd = m.svd(true, true);
    let u = svd.u.ok_or(PoseError::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(PoseError::DegenerateConfiguration)?;
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        // Flip along the smallest singular value.
        let s = &svd.singular_values;
        let mut min_index = 0;
        for i in 1..3 {
            if s[i] < s[min_index] {
                min_index = i;
            }
        }
        diag[min_index] = -1.0;
    }
    Ok(u * Matrix3::from_diagonal(&diag) * v_t)
}

/// Decomposes a rotation as `R = Rz(roll) * Ry(yaw) * Rx(pitch)`.
///
/// At gimbal lock (`|cos(yaw)| < 1e-7`) the roll is fixed to zero and the
/// remaining freedom is absorbed into the pitch.
pub fn rotation_to_euler(rotation: &Matrix3<f64>) -> EulerAngles {
    let sin_yaw = (-rotation[(2, 0)]).clamp(-1.0, 1.0);
    let cos_yaw = (rotation[(2, 1)].powi(2) + rotation[(2, 2)].powi(2)).sqrt();
    if cos_yaw < GIMBAL_LOCK_TOL {
        let sign = if sin_yaw >= 0.0 { 1.0 } else { -1.0 };
        EulerAngles {
            pitch: wrap_angle((sign * rotation[(0, 1)]).atan2(sign * rotation[(0, 2)])),
            yaw: sign * std::f64::consts::FRAC_PI_2,
            roll: 0.0,
        }
    } else {
        EulerAngles {
            pitch: wrap_angle(rotation[(2, 1)].atan2(rotation[(2, 2)])),
            yaw: sin_yaw.asin(),
            roll: wrap_angle(rotation[(1, 0)].atan2(rotation[(0, 0)])),
        }
    }
}

/// Maps an angle into (-pi, pi].
fn wrap_angle(a: f64) -> f64 {
    if a <= -std::f64::consts::PI {
        a + std::f64::consts::TAU
    } else if a > std::f64::consts::PI {
        a - std::f64::consts::TAU
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        EulerAngles {
            pitch: rng.random_range(-1.2..1.2),
            yaw: rng.random_range(-1.3..1.3),
            roll: rng.random_range(-1.2..1.2),
        }
        .to_rotation()
    }

    fn random_points(rng: &mut ChaCha8Rng, count: usize) -> DVector<f64> {
        DVector::from_fn(3 * count, |_, _| rng.random_range(-60.0..60.0))
    }

    #[test]
    fn project_identity_camera() {
        let points = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let projected = project(&points, &Pose::identity()).unwrap();
        assert_eq!(projected.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn project_scale_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let points = random_points(&mut rng, 7);
        let rotation = random_rotation(&mut rng);
        let translation = Vector3::new(1.0, -2.0, 0.5);
        let base = project(&points, &Pose::new(1.0, rotation, translation).unwrap()).unwrap();
        let doubled = project(&points, &Pose::new(2.0, rotation, translation).unwrap()).unwrap();
        for i in 0..base.len() {
            assert_eq!(doubled[i], 2.0 * base[i]);
        }
    }

    #[test]
    fn project_rotation_about_z() {
        let rotation = EulerAngles {
            pitch: 0.0,
            yaw: 0.0,
            roll: std::f64::consts::FRAC_PI_2,
        }
        .to_rotation();
        let pose = Pose::new(1.0, rotation, Vector3::zeros()).unwrap();
        let projected = project(&DVector::from_vec(vec![1.0, 0.0, 0.0]), &pose).unwrap();
        assert!((projected[0] - 0.0).abs() < 1e-15);
        assert!((projected[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn project_rejects_non_finite() {
        let points = DVector::from_vec(vec![1.0, f64::NAN, 0.0]);
        assert!(matches!(
            project(&points, &Pose::identity()),
            Err(PoseError::NonFinite { .. })
        ));
    }

    #[test]
    fn estimate_pose_round_trips_noiseless_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let points3d = random_points(&mut rng, 12);
            let pose = Pose::new(
                rng.random_range(0.5..3.0),
                random_rotation(&mut rng),
                Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0),
            )
            .unwrap();
            let points2d = project(&points3d, &pose).unwrap();
            let weights = DVector::from_fn(12, |_, _| rng.random_range(0.2..4.0));
            let estimated = estimate_pose(&points3d, &points2d, &weights).unwrap();
            let reprojected = project(&points3d, &estimated).unwrap();
            let rms = ((&reprojected - &points2d).norm_squared() / points2d.len() as f64).sqrt();
            assert!(rms <= 1e-9, "rms {rms}");
        }
    }

    #[test]
    fn estimate_pose_frontal_recovers_identity_rotation() {
        let points3d = DVector::from_vec(vec![
            10.0, 0.0, 5.0, //
            -10.0, 4.0, 0.0, //
            0.0, -8.0, 2.0, //
            3.0, 7.0, 9.0, //
            -5.0, -5.0, 4.0,
        ]);
        let scale = 1.7;
        let mut points2d = DVector::zeros(10);
        for i in 0..5 {
            points2d[2 * i] = scale * points3d[3 * i];
            points2d[2 * i + 1] = scale * points3d[3 * i + 1];
        }
        let weights = DVector::from_element(5, 1.0);
        let pose = estimate_pose(&points3d, &points2d, &weights).unwrap();
        assert!((pose.scale - scale).abs() <= 1e-9);
        assert!((pose.rotation - Matrix3::identity()).abs().max() <= 1e-9);
    }

    #[test]
    fn estimate_pose_is_invariant_to_weight_mass_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points3d = random_points(&mut rng, 8);
        let pose = Pose::new(1.4, random_rotation(&mut rng), Vector3::new(3.0, -1.0, 0.0)).unwrap();
        let points2d = project(&points3d, &pose).unwrap();
        let weights = DVector::from_fn(8, |_, _| rng.random_range(0.5..2.0));

        // Duplicate every landmark with half its weight.
        let mut dup3 = DVector::zeros(2 * points3d.len());
        let mut dup2 = DVector::zeros(2 * points2d.len());
        let mut dupw = DVector::zeros(16);
        for i in 0..8 {
            for r in 0..3 {
                dup3[3 * (2 * i) + r] = points3d[3 * i + r];
                dup3[3 * (2 * i + 1) + r] = points3d[3 * i + r];
            }
            for r in 0..2 {
                dup2[2 * (2 * i) + r] = points2d[2 * i + r];
                dup2[2 * (2 * i + 1) + r] = points2d[2 * i + r];
            }
            dupw[2 * i] = weights[i] / 2.0;
            dupw[2 * i + 1] = weights[i] / 2.0;
        }

        let original = estimate_pose(&points3d, &points2d, &weights).unwrap();
        let duplicated = estimate_pose(&dup3, &dup2, &dupw).unwrap();
        assert!((original.scale - duplicated.scale).abs() <= 1e-12);
        assert!((original.rotation - duplicated.rotation).abs().max() <= 1e-12);
        assert!((original.translation - duplicated.translation).abs().max() <= 1e-12);
    }

    #[test]
    fn estimate_pose_rejects_degenerate_configurations() {
        // Collinear points.
        let line = DVector::from_vec(vec![
            0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0,
        ]);
        let flat = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let weights = DVector::from_element(4, 1.0);
        assert!(matches!(
            estimate_pose(&line, &flat, &weights),
            Err(PoseError::DegenerateConfiguration)
        ));

        // Coplanar points (all z = 0) also leave the scatter rank deficient.
        let plane = DVector::from_vec(vec![
            0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0,
        ]);
        assert!(matches!(
            estimate_pose(&plane, &flat, &weights),
            Err(PoseError::DegenerateConfiguration)
        ));
    }

    #[test]
    fn estimate_pose_rejects_bad_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points3d = random_points(&mut rng, 5);
        let points2d = project(&points3d, &Pose::identity()).unwrap();
        let mut weights = DVector::from_element(5, 1.0);
        weights[3] = 0.0;
        assert!(matches!(
            estimate_pose(&points3d, &points2d, &weights),
            Err(PoseError::InvalidWeight { index: 3, .. })
        ));
    }

    #[test]
    fn euler_identity_is_zero() {
        let euler = rotation_to_euler(&Matrix3::identity());
        assert_eq!(euler.pitch, 0.0);
        assert_eq!(euler.yaw, 0.0);
        assert_eq!(euler.roll, 0.0);
    }

    #[test]
    fn euler_pure_yaw() {
        let yaw = 30.0_f64.to_radians();
        let rotation = EulerAngles {
            pitch: 0.0,
            yaw,
            roll: 0.0,
        }
        .to_rotation();
        let euler = rotation_to_euler(&rotation);
        assert!((euler.yaw - yaw).abs() <= 1e-9);
        assert!(euler.pitch.abs() <= 1e-9);
        assert!(euler.roll.abs() <= 1e-9);
    }

    #[test]
    fn euler_round_trip_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let rotation = random_rotation(&mut rng);
            let euler = rotation_to_euler(&rotation);
            let rebuilt = euler.to_rotation();
            assert!((rebuilt - rotation).abs().max() <= 1e-9);
        }
    }

    #[test]
    fn euler_gimbal_lock_sets_roll_to_zero() {
        let rotation = EulerAngles {
            pitch: 0.4,
            yaw: std::f64::consts::FRAC_PI_2,
            roll: 0.3,
        }
        .to_rotation();
        let euler = rotation_to_euler(&rotation);
        assert_eq!(euler.roll, 0.0);
        let rebuilt = euler.to_rotation();
        assert!((rebuilt - rotation).abs().max() <= 1e-9);
    }

    #[test]
    fn pose_validation_rejects_non_rotation() {
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            Pose::new(1.0, skewed, Vector3::zeros()),
            Err(PoseError::InvalidRotation { .. })
        ));
        assert!(matches!(
            Pose::new(-1.0, Matrix3::identity(), Vector3::zeros()),
            Err(PoseError::InvalidScale(_))
        ));
    }
}
