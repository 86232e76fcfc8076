//! Synthetic ground-truth scenes: sampled coefficients, a configured pose,
//! projected clean landmarks, and noise-corrupted observations.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project, EulerAngles, Pose, PoseError};
use crate::model::{
    instantiate_shape, landmark_points_3d, ModelError, MorphableModel, ShapeCoefficients,
};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error("invalid noise spec: {reason}")]
    InvalidNoise { reason: String },
}

/// Observation noise applied to the clean 2D landmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Observations equal the clean projections.
    None,
    /// Isotropic gaussian jitter with the given standard deviation (pixels)
    /// on every coordinate.
    Gaussian { sigma: f64 },
    /// Per-landmark sigma drawn uniformly from `[sigma_min, sigma_max]`, then
    /// gaussian jitter with that sigma on both coordinates.
    Heteroscedastic { sigma_min: f64, sigma_max: f64 },
    /// Each landmark is displaced with probability `fraction` by a uniform
    /// angle and a radius drawn uniformly from `[radius_min, radius_max]`.
    Outlier {
        fraction: f64,
        radius_min: f64,
        radius_max: f64,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let fail = |reason: String| Err(SceneError::InvalidNoise { reason });
        match *self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Gaussian { sigma } => {
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return fail(format!("gaussian sigma must be >= 0, got {sigma}"));
                }
                Ok(())
            }
            NoiseSpec::Heteroscedastic {
                sigma_min,
                sigma_max,
            } => {
                if !(sigma_min.is_finite() && sigma_max.is_finite())
                    || sigma_min < 0.0
                    || sigma_max < sigma_min
                {
                    return fail(format!(
                        "heteroscedastic range must satisfy 0 <= min <= max, got [{sigma_min}, {sigma_max}]"
                    ));
                }
                Ok(())
            }
            NoiseSpec::Outlier {
                fraction,
                radius_min,
                radius_max,
            } => {
                if !(fraction.is_finite() && (0.0..=1.0).contains(&fraction)) {
                    return fail(format!("outlier fraction must be in [0, 1], got {fraction}"));
                }
                if !(radius_min.is_finite() && radius_max.is_finite())
                    || radius_min < 0.0
                    || radius_max < radius_min
                {
                    return fail(format!(
                        "outlier radius ring must satisfy 0 <= r1 <= r2, got [{radius_min}, {radius_max}]"
                    ));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseSpec::None => write!(f, "none"),
            NoiseSpec::Gaussian { sigma } => write!(f, "gauss:{sigma}"),
            NoiseSpec::Heteroscedastic {
                sigma_min,
                sigma_max,
            } => write!(f, "hetero:{sigma_min},{sigma_max}"),
            NoiseSpec::Outlier {
                fraction,
                radius_min,
                radius_max,
            } => write!(f, "outlier:{fraction},{radius_min},{radius_max}"),
        }
    }
}

impl FromStr for NoiseSpec {
    type Err = String;

    /// Parses `none`, `gauss:SIGMA`, `hetero:MIN,MAX`, `outlier:P,R1,R2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_floats = |tail: &str, n: usize| -> Result<Vec<f64>, String> {
            let parts: Vec<&str> = tail.split(',').collect();
            if parts.len() != n {
                return Err(format!("expected {n} comma-separated values, got {}", parts.len()));
            }
            parts
                .iter()
                .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad number {p:?}: {e}")))
                .collect()
        };
        let spec = if s == "none" {
            NoiseSpec::None
        } else if let Some(tail) = s.strip_prefix("gauss:") {
            let v = parse_floats(tail, 1)?;
            NoiseSpec::Gaussian { sigma: v[0] }
        } else if let Some(tail) = s.strip_prefix("hetero:") {
            let v = parse_floats(tail, 2)?;
            NoiseSpec::Heteroscedastic {
                sigma_min: v[0],
                sigma_max: v[1],
            }
        } else if let Some(tail) = s.strip_prefix("outlier:") {
            let v = parse_floats(tail, 3)?;
            NoiseSpec::Outlier {
                fraction: v[0],
                radius_min: v[1],
                radius_max: v[2],
            }
        } else {
            return Err(format!(
                "unknown noise spec {s:?}; expected none | gauss:s | hetero:a,b | outlier:p,r1,r2"
            ));
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

/// Ground-truth camera configuration for a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    /// Weak-perspective scale (pixels per model unit).
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for PoseSpec {
    fn default() -> Self {
        Self {
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            roll_deg: 0.0,
            scale: 1.5,
            tx: 0.0,
            ty: 0.0,
        }
    }
}

impl PoseSpec {
    pub fn build_pose(&self) -> Result<Pose, PoseError> {
        let rotation =
            EulerAngles::from_degrees(self.pitch_deg, self.yaw_deg, self.roll_deg).to_rotation();
        Pose::new(self.scale, rotation, Vector3::new(self.tx, self.ty, 0.0))
    }
}

/// One synthetic evaluation sample: the true model instance and pose, the
/// exact landmark projections, and the noise-corrupted observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub true_coeffs: ShapeCoefficients,
    pub true_pose: Pose,
    pub clean_landmarks_2d: DVector<f64>,
    pub noisy_landmarks_2d: DVector<f64>,
    pub noise_spec: NoiseSpec,
    pub seed: u64,
}

/// Samples a scene from the model's own PCA prior.
///
/// Coefficients are drawn zero-mean with the model's per-component standard
/// deviations, truncated at three sigma by rejection. Clean landmarks are the
/// exact projections of the instantiated shape at the model's landmark
/// vertices; noise is then applied per `noise_spec`. Deterministic given
/// `seed`.
pub fn synth_scene(
    model: &MorphableModel,
    seed: u64,
    noise_spec: NoiseSpec,
    pose_spec: &PoseSpec,
) -> Result<GroundTruthScene, SceneError> {
    model.validate()?;
    noise_spec.validate()?;
    let true_pose = pose_spec.build_pose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let alpha_id = truncated_normal(&model.id_stddev, &mut rng);
    let alpha_exp = truncated_normal(&model.exp_stddev, &mut rng);
    let true_coeffs = ShapeCoefficients {
        alpha_id,
        alpha_exp,
    };

    let shape = instantiate_shape(model, &true_coeffs)?;
    let points3d = landmark_points_3d(&shape, &model.landmark_indices)?;
    let clean_landmarks_2d = project(&points3d, &true_pose)?;
    let noisy_landmarks_2d = apply_noise(&clean_landmarks_2d, noise_spec, &mut rng);

    Ok(GroundTruthScene {
        true_coeffs,
        true_pose,
        clean_landmarks_2d,
        noisy_landmarks_2d,
        noise_spec,
        seed,
    })
}

fn truncated_normal(stddevs: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(stddevs.len(), |i, _| {
        let z = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 3.0 {
                break z;
            }
        };
        z * stddevs[i]
    })
}

fn apply_noise(clean: &DVector<f64>, spec: NoiseSpec, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut noisy = clean.clone();
    let count = clean.len() / 2;
    match spec {
        NoiseSpec::None => {}
        NoiseSpec::Gaussian { sigma } => {
            for i in 0..2 * count {
                noisy[i] += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        NoiseSpec::Heteroscedastic {
            sigma_min,
            sigma_max,
        } => {
            for i in 0..count {
                let sigma = if sigma_max > sigma_min {
                    rng.random_range(sigma_min..sigma_max)
                } else {
                    sigma_min
                };
                noisy[2 * i] += sigma * rng.sample::<f64, _>(StandardNormal);
                noisy[2 * i + 1] += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        NoiseSpec::Outlier {
            fraction,
            radius_min,
            radius_max,
        } => {
            for i in 0..count {
                if rng.random_range(0.0..1.0) < fraction {
                    let angle = rng.random_range(0.0..std::f64::consts::TAU);
                    let radius = if radius_max > radius_min {
                        rng.random_range(radius_min..radius_max)
                    } else {
                        radius_min
                    };
                    noisy[2 * i] += radius * angle.cos();
                    noisy[2 * i + 1] += radius * angle.sin();
                }
            }
        }
    }
    noisy
}
