//! JSON fit/bench reports and CSV residual tables.
//!
//! Reports serialize floating point values with serde_json's shortest
//! round-trip representation, so writing and re-reading a report reproduces
//! every finite value exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchReport, ResidualScatterPair};
use crate::camera::rotation_to_euler;
use crate::fitter::{FitConfig, FitResult};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("report (de)serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Camera pose in plain-array form: scale, row-major rotation, translation,
/// and Euler angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub scale: f64,
    pub rotation_row_major: Vec<f64>,
    pub translation: Vec<f64>,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub roll_deg: f64,
}

/// Full record of one fit: recovered parameters, residuals, the error trace,
/// and an echo of the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub pose: PoseReport,
    pub alpha_id: Vec<f64>,
    pub alpha_exp: Vec<f64>,
    pub landmark_indices: Vec<usize>,
    pub per_landmark_residuals: Vec<f64>,
    pub error_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub config: FitConfig,
    /// Landmark error of the reported iterate against the observations
    /// (single-sample Mean Euclidean Metric).
    pub mem: f64,
}

impl FitReport {
    pub fn from_result(result: &FitResult, config: &FitConfig) -> Self {
        let euler = rotation_to_euler(&result.pose.rotation);
        let rotation_row_major = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| result.pose.rotation[(r, c)])
            .collect();
        Self {
            pose: PoseReport {
                scale: result.pose.scale,
                rotation_row_major,
                translation: result.pose.translation.iter().copied().collect(),
                pitch_deg: euler.pitch.to_degrees(),
                yaw_deg: euler.yaw.to_degrees(),
                roll_deg: euler.roll.to_degrees(),
            },
            alpha_id: result.coeffs.alpha_id.iter().copied().collect(),
            alpha_exp: result.coeffs.alpha_exp.iter().copied().collect(),
            landmark_indices: result.landmark_indices.clone(),
            per_landmark_residuals: result.per_landmark_residuals.iter().copied().collect(),
            error_trace: result.error_trace.clone(),
            iterations_run: result.iterations_run,
            converged: result.converged,
            config: *config,
            mem: result.best_error(),
        }
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_fit_report(report: &FitReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    std::fs::write(path, report.to_json()?)?;
    Ok(())
}

pub fn read_fit_report(path: impl AsRef<Path>) -> Result<FitReport, ReportError> {
    FitReport::from_json(&std::fs::read_to_string(path)?)
}

pub fn write_bench_report(report: &BenchReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let mut text = serde_json::to_string(report)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes both residual tables as one CSV: a `condition` column followed by
/// one column per landmark coordinate, one row per scene.
pub fn write_scatter_csv(
    scatter: &ResidualScatterPair,
    path: impl AsRef<Path>,
) -> Result<(), ReportError> {
    let width = scatter
        .weighted
        .first()
        .or(scatter.baseline.first())
        .map_or(0, Vec::len);
    let mut out = String::from("condition");
    for c in 0..width {
        out.push_str(&format!(",coord_{c}"));
    }
    out.push('\n');
    for (condition, rows) in [("weighted", &scatter.weighted), ("baseline", &scatter.baseline)] {
        for row in rows {
            out.push_str(condition);
            for value in row {
                out.push_str(&format!(",{value:?}"));
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
