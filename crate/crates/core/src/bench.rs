//! Weighted-versus-baseline benchmark harness.
//!
//! For each yaw bin the harness generates scenes, fits each one with the
//! weighted and the baseline configuration, and scores both against the
//! clean (noise-free) ground-truth landmarks so the numbers measure
//! reconstruction fidelity rather than noise-fitting. Scene fits run in
//! parallel; per-scene seeds are derived up front and aggregation follows
//! scene order, so reports are identical regardless of scheduling.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitter::{fit, project_model_landmarks, FitConfig, FitError, FitResult};
use crate::metrics::{mem, residual_scatter, MetricsError};
use crate::model::MorphableModel;
use crate::scene::{synth_scene, NoiseSpec, PoseSpec, SceneError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("scene generation failed (yaw {yaw_deg}, scene {scene}): {source}")]
    Scene {
        yaw_deg: f64,
        scene: usize,
        source: SceneError,
    },
    #[error("fit failed (yaw {yaw_deg}, scene {scene}, {condition}): {source}")]
    SceneFit {
        yaw_deg: f64,
        scene: usize,
        condition: &'static str,
        source: FitError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Benchmark configuration: scene count per yaw bin, the bins themselves,
/// the noise regime, and the two fitting configurations under comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub n_scenes: usize,
    pub yaw_bins_deg: Vec<f64>,
    pub noise_spec: NoiseSpec,
    pub config_weighted: FitConfig,
    pub config_baseline: FitConfig,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            n_scenes: 100,
            yaw_bins_deg: vec![-45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0],
            noise_spec: NoiseSpec::Outlier {
                fraction: 0.1,
                radius_min: 10.0,
                radius_max: 20.0,
            },
            config_weighted: FitConfig::default(),
            config_baseline: FitConfig {
                weighting_enabled: false,
                ..FitConfig::default()
            },
            seed: 0,
        }
    }
}

/// Aggregate for one yaw bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YawBinReport {
    pub yaw_deg: f64,
    pub n_scenes: usize,
    pub mem_weighted: f64,
    pub mem_baseline: f64,
    /// `(baseline - weighted) / baseline * 100`.
    pub improvement_percent: f64,
    /// Scenes in which the weighted fit beat the baseline.
    pub weighted_wins: usize,
}

/// Mean anytime error per iteration for each condition.
///
/// Each fit contributes its running-minimum error trace (the error of the
/// solution it would report if stopped at that iteration), padded to the
/// configured iteration count; the padded traces are averaged over all
/// scenes of all bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurves {
    pub weighted: Vec<f64>,
    pub baseline: Vec<f64>,
}

/// Per-coordinate residual tables: one row per scene (bins concatenated in
/// order), one column per landmark coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualScatterPair {
    pub weighted: Vec<Vec<f64>>,
    pub baseline: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub per_bin: Vec<YawBinReport>,
    pub error_curves: ErrorCurves,
    pub residual_scatter: ResidualScatterPair,
}

struct SceneOutcome {
    clean: DVector<f64>,
    estimated_weighted: DVector<f64>,
    estimated_baseline: DVector<f64>,
    result_weighted: FitResult,
    result_baseline: FitResult,
}

/// Runs the full benchmark. Deterministic given `spec`.
pub fn run_benchmark(model: &MorphableModel, spec: &BenchSpec) -> Result<BenchReport, BenchError> {
    if spec.n_scenes < 1 {
        return Err(BenchError::InvalidSpec {
            reason: "n_scenes must be >= 1".to_string(),
        });
    }
    if spec.yaw_bins_deg.is_empty() {
        return Err(BenchError::InvalidSpec {
            reason: "yaw_bins_deg must not be empty".to_string(),
        });
    }

    let jobs: Vec<(usize, usize)> = (0..spec.yaw_bins_deg.len())
        .flat_map(|bin| (0..spec.n_scenes).map(move |scene| (bin, scene)))
        .collect();

    let outcomes: Vec<SceneOutcome> = jobs
        .par_iter()
        .map(|&(bin, scene)| run_scene(model, spec, bin, scene))
        .collect::<Result<_, _>>()?;

    let mut per_bin = Vec::with_capacity(spec.yaw_bins_deg.len());
    for (bin, &yaw_deg) in spec.yaw_bins_deg.iter().enumerate() {
        let slice = &outcomes[bin * spec.n_scenes..(bin + 1) * spec.n_scenes];
        let cleans: Vec<DVector<f64>> = slice.iter().map(|o| o.clean.clone()).collect();
        let est_w: Vec<DVector<f64>> = slice.iter().map(|o| o.estimated_weighted.clone()).collect();
        let est_b: Vec<DVector<f64>> = slice.iter().map(|o| o.estimated_baseline.clone()).collect();
        let mem_weighted = mem(&cleans, &est_w)?;
        let mem_baseline = mem(&cleans, &est_b)?;
        let weighted_wins = slice
            .iter()
            .filter(|o| {
                (&o.clean - &o.estimated_weighted).norm_squared()
                    < (&o.clean - &o.estimated_baseline).norm_squared()
            })
            .count();
        per_bin.push(YawBinReport {
            yaw_deg,
            n_scenes: spec.n_scenes,
            mem_weighted,
            mem_baseline,
            improvement_percent: (mem_baseline - mem_weighted) / mem_baseline * 100.0,
            weighted_wins,
        });
    }

    let error_curves = ErrorCurves {
        weighted: mean_anytime_curve(
            outcomes.iter().map(|o| &o.result_weighted.error_trace),
            spec.config_weighted.max_iterations,
        ),
        baseline: mean_anytime_curve(
            outcomes.iter().map(|o| &o.result_baseline.error_trace),
            spec.config_baseline.max_iterations,
        ),
    };

    let weighted_results: Vec<FitResult> =
        outcomes.iter().map(|o| o.result_weighted.clone()).collect();
    let baseline_results: Vec<FitResult> =
        outcomes.iter().map(|o| o.result_baseline.clone()).collect();
    let residual_scatter = ResidualScatterPair {
        weighted: residual_scatter(&weighted_results)?,
        baseline: residual_scatter(&baseline_results)?,
    };

    Ok(BenchReport {
        per_bin,
        error_curves,
        residual_scatter,
    })
}

fn run_scene(
    model: &MorphableModel,
    spec: &BenchSpec,
    bin: usize,
    scene_index: usize,
) -> Result<SceneOutcome, BenchError> {
    let yaw_deg = spec.yaw_bins_deg[bin];
    let pose_spec = PoseSpec {
        yaw_deg,
        ..PoseSpec::default()
    };
    let seed = derive_scene_seed(spec.seed, bin, scene_index);
    let scene = synth_scene(model, seed, spec.noise_spec, &pose_spec).map_err(|source| {
        BenchError::Scene {
            yaw_deg,
            scene: scene_index,
            source,
        }
    })?;

    let fit_condition = |config: &FitConfig, condition: &'static str| {
        fit(model, &scene.noisy_landmarks_2d, config).map_err(|source| BenchError::SceneFit {
            yaw_deg,
            scene: scene_index,
            condition,
            source,
        })
    };
    let result_weighted = fit_condition(&spec.config_weighted, "weighted")?;
    let result_baseline = fit_condition(&spec.config_baseline, "baseline")?;

    // Score at the model's nominal landmark vertices so both conditions are
    // compared against the same ground-truth points.
    let reproject = |result: &FitResult, condition: &'static str| {
        project_model_landmarks(model, &result.coeffs, &result.pose, &model.landmark_indices)
            .map_err(|source| BenchError::SceneFit {
                yaw_deg,
                scene: scene_index,
                condition,
                source,
            })
    };
    let estimated_weighted = reproject(&result_weighted, "weighted")?;
    let estimated_baseline = reproject(&result_baseline, "baseline")?;

    Ok(SceneOutcome {
        clean: scene.clean_landmarks_2d,
        estimated_weighted,
        estimated_baseline,
        result_weighted,
        result_baseline,
    })
}

/// Averages running-minimum error traces, padding each trace to `length`
/// with its final running minimum.
fn mean_anytime_curve<'a>(
    traces: impl Iterator<Item = &'a Vec<f64>>,
    length: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0; length];
    let mut count = 0usize;
    for trace in traces {
        count += 1;
        let mut best = f64::INFINITY;
        for i in 0..length {
            if i < trace.len() {
                best = best.min(trace[i]);
            }
            sums[i] += best;
        }
    }
    if count > 0 {
        for value in &mut sums {
            *value /= count as f64;
        }
    }
    sums
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_scene_seed(base: u64, bin: usize, scene: usize) -> u64 {
    let mixed = splitmix64(base ^ (bin as u64 + 1).wrapping_mul(0x5851_F42D_4C95_7F2D));
    splitmix64(mixed ^ (scene as u64 + 1).wrapping_mul(0x1405_7B7E_F767_814F))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synth_model, SynthModelSpec};

    fn bench_model() -> MorphableModel {
        synth_model(
            &SynthModelSpec {
                n_vertices: 200,
                m_id: 8,
                k_exp: 4,
                n_landmarks: 40,
                smoothness: 1.0,
            },
            77,
        )
        .unwrap()
    }

    fn tiny_spec(noise: NoiseSpec) -> BenchSpec {
        BenchSpec {
            n_scenes: 3,
            yaw_bins_deg: vec![-20.0, 20.0],
            noise_spec: noise,
            seed: 5,
            ..BenchSpec::default()
        }
    }

    #[test]
    fn benchmark_is_deterministic() {
        let model = bench_model();
        let spec = tiny_spec(NoiseSpec::Gaussian { sigma: 2.0 });
        let a = run_benchmark(&model, &spec).unwrap();
        let b = run_benchmark(&model, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn improvement_percent_is_recomputable() {
        let model = bench_model();
        let report =
            run_benchmark(&model, &tiny_spec(NoiseSpec::Gaussian { sigma: 2.0 })).unwrap();
        for bin in &report.per_bin {
            let expected = (bin.mem_baseline - bin.mem_weighted) / bin.mem_baseline * 100.0;
            assert!((bin.improvement_percent - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn exact_data_limit_reaches_tiny_mem_for_both_conditions() {
        let model = bench_model();
        let exact = FitConfig {
            lambda_id: 0.0,
            lambda_exp: 0.0,
            tau: 0.0,
            ..FitConfig::default()
        };
        let spec = BenchSpec {
            n_scenes: 2,
            yaw_bins_deg: vec![0.0, 25.0],
            noise_spec: NoiseSpec::None,
            config_weighted: exact,
            config_baseline: FitConfig {
                weighting_enabled: false,
                ..exact
            },
            seed: 9,
        };
        let report = run_benchmark(&model, &spec).unwrap();
        for bin in &report.per_bin {
            assert!(bin.mem_weighted <= 1e-5, "weighted {}", bin.mem_weighted);
            assert!(bin.mem_baseline <= 1e-5, "baseline {}", bin.mem_baseline);
            assert!(
                (bin.mem_weighted - bin.mem_baseline).abs() <= 1e-5,
                "difference {}",
                (bin.mem_weighted - bin.mem_baseline).abs()
            );
        }
    }

    #[test]
    fn scene_errors_carry_scene_identity() {
        let mut model = bench_model();
        model.contour_candidates = None;
        let mut spec = tiny_spec(NoiseSpec::None);
        spec.config_weighted.contour_recorrespond_enabled = true;
        let err = run_benchmark(&model, &spec).unwrap_err();
        match err {
            BenchError::SceneFit { scene, condition, .. } => {
                assert_eq!(scene, 0);
                assert_eq!(condition, "weighted");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_specs() {
        let model = bench_model();
        let mut spec = tiny_spec(NoiseSpec::None);
        spec.n_scenes = 0;
        assert!(matches!(
            run_benchmark(&model, &spec),
            Err(BenchError::InvalidSpec { .. })
        ));
        let mut spec = tiny_spec(NoiseSpec::None);
        spec.yaw_bins_deg.clear();
        assert!(matches!(
            run_benchmark(&model, &spec),
            Err(BenchError::InvalidSpec { .. })
        ));
    }

    #[test]
    fn error_curves_are_non_increasing() {
        let model = bench_model();
        let report =
            run_benchmark(&model, &tiny_spec(NoiseSpec::Gaussian { sigma: 2.0 })).unwrap();
        for curve in [&report.error_curves.weighted, &report.error_curves.baseline] {
            assert_eq!(curve.len(), FitConfig::default().max_iterations);
            for i in 1..curve.len() {
                assert!(curve[i] <= curve[i - 1] + 1e-12);
            }
        }
    }
}
