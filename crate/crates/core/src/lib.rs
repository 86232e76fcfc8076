//! Landmark-based 3D morphable face model fitting with adaptive residual
//! weighting.
//!
//! The crate fits a PCA face shape model (identity + expression bases) to a
//! set of 2D landmarks under a weak-perspective camera. Fitting alternates
//! between closed-form pose estimation and regularized closed-form coefficient
//! solves, and re-weights each landmark on every iteration in proportion to
//! its current reprojection distance so that poorly matched points are pulled
//! in harder on the next pass.
//!
//! Modules:
//!
//! - [`model`] — the shape model, instantiation, and a deterministic synthetic
//!   model generator (no licensed face model assets required).
//! - [`scene`] — synthetic ground-truth scenes with configurable observation
//!   noise (gaussian, heteroscedastic, outlier contamination).
//! - [`camera`] — weak-perspective projection and weighted scaled-orthographic
//!   pose estimation.
//! - [`fitter`] — the residual-weighted alternating fitting loop.
//! - [`metrics`] / [`bench`] — the evaluation metric and the weighted versus
//!   unweighted benchmark harness.
//! - [`io`] — binary model container, landmark `.pts` files, Wavefront OBJ
//!   export, and JSON/CSV reports.

pub mod bench;
pub mod camera;
pub mod fitter;
pub mod io;
pub mod metrics;
pub mod model;
pub mod scene;

pub use bench::{run_benchmark, BenchReport, BenchSpec};
pub use camera::{estimate_pose, project, rotation_to_euler, EulerAngles, Pose};
pub use fitter::{fit, FitConfig, FitResult, WeightState};
pub use metrics::mem;
pub use model::{
    instantiate_shape, landmark_points_3d, synth_model, MorphableModel, ShapeCoefficients,
    SynthModelSpec,
};
pub use scene::{synth_scene, GroundTruthScene, NoiseSpec, PoseSpec};
