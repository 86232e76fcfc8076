//! `facefit` — synthetic model generation, scene synthesis, landmark fitting,
//! benchmarking and evaluation from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or numeric error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use facefit_core::bench::{run_benchmark, BenchSpec};
use facefit_core::fitter::{fit, project_model_landmarks, FitConfig};
use facefit_core::io::{
    read_model, read_pts, write_bench_report, write_fit_report, write_model, write_obj,
    write_pts, write_scatter_csv, FitReport,
};
use facefit_core::metrics::mem;
use facefit_core::model::{instantiate_shape, synth_model, SynthModelSpec};
use facefit_core::scene::{synth_scene, NoiseSpec, PoseSpec};

#[derive(Parser)]
#[command(name = "facefit", version, about = "Landmark-based 3D face model fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic morphable model.
    SynthModel {
        /// Output model path (binary container).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n_vertices: usize,
        #[arg(long, default_value_t = 20)]
        m_id: usize,
        #[arg(long, default_value_t = 10)]
        k_exp: usize,
        #[arg(long, default_value_t = 68)]
        landmarks: usize,
        #[arg(long, default_value_t = 1.0)]
        smoothness: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a ground-truth scene: noisy observations plus clean truth.
    SynthScene {
        #[arg(long)]
        model: PathBuf,
        /// Where to write the observed (noise-corrupted) landmarks.
        #[arg(long)]
        out_pts: PathBuf,
        /// Where to write the clean ground-truth landmarks.
        #[arg(long)]
        out_truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        yaw: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        pitch: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        roll: f64,
        /// Projection scale, pixels per model unit.
        #[arg(long, default_value_t = 1.5)]
        scale: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tx: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        ty: f64,
        /// none | gauss:SIGMA | hetero:MIN,MAX | outlier:P,R1,R2
        #[arg(long, default_value = "none")]
        noise: NoiseSpec,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the model to observed landmarks.
    Fit {
        #[arg(long)]
        model: PathBuf,
        /// Observed landmarks (pts format).
        #[arg(long)]
        pts: PathBuf,
        /// JSON fit report output.
        #[arg(long)]
        out_report: Option<PathBuf>,
        /// Fitted mesh output (Wavefront OBJ).
        #[arg(long)]
        out_obj: Option<PathBuf>,
        /// Fitted landmark projections output (pts format).
        #[arg(long)]
        out_pts: Option<PathBuf>,
        /// Disable residual weighting (unweighted baseline).
        #[arg(long)]
        no_weighting: bool,
        /// Re-select contour vertex correspondences by back projection.
        #[arg(long)]
        contour_recorrespond: bool,
        #[arg(long)]
        xi1: Option<f64>,
        #[arg(long)]
        xi2: Option<f64>,
        #[arg(long)]
        lambda_id: Option<f64>,
        #[arg(long)]
        lambda_exp: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        min_rel_improvement: Option<f64>,
    },
    /// Compare weighted and unweighted fitting over synthetic scenes.
    Bench {
        #[arg(long)]
        model: PathBuf,
        /// Scenes per yaw bin.
        #[arg(long, default_value_t = 100)]
        scenes: usize,
        /// Comma-separated yaw angles in degrees.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-45,-30,-15,0,15,30,45"
        )]
        yaw_bins: Vec<f64>,
        /// none | gauss:SIGMA | hetero:MIN,MAX | outlier:P,R1,R2
        #[arg(long)]
        noise: NoiseSpec,
        /// JSON benchmark report output.
        #[arg(long)]
        out_report: PathBuf,
        /// Optional CSV residual-scatter table.
        #[arg(long)]
        out_scatter: Option<PathBuf>,
        /// Ridge weight applied to both conditions' identity solves.
        #[arg(long)]
        lambda_id: Option<f64>,
        /// Ridge weight applied to both conditions' expression solves.
        #[arg(long)]
        lambda_exp: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the Mean Euclidean Metric between two landmark files.
    Eval {
        #[arg(long)]
        truth_pts: PathBuf,
        #[arg(long)]
        est_pts: PathBuf,
    },
}

/// Data or numeric failure: message plus exit code 2.
struct DataError(String);

impl<E: std::fmt::Display> From<E> for DataError {
    fn from(e: E) -> Self {
        DataError(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(DataError(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), DataError> {
    match cli.command {
        Command::SynthModel {
            out,
            n_vertices,
            m_id,
            k_exp,
            landmarks,
            smoothness,
            seed,
        } => {
            let spec = SynthModelSpec {
                n_vertices,
                m_id,
                k_exp,
                n_landmarks: landmarks,
                smoothness,
            };
            let model = synth_model(&spec, seed)?;
            write_model(&model, &out)?;
            println!(
                "model written: {} vertices, {} id + {} exp modes, {} landmarks",
                model.n_vertices,
                model.m_id(),
                model.k_exp(),
                model.n_landmarks()
            );
            Ok(())
        }
        Command::SynthScene {
            model,
            out_pts,
            out_truth,
            yaw,
            pitch,
            roll,
            scale,
            tx,
            ty,
            noise,
            seed,
        } => {
            let model = read_model(&model)?;
            let pose_spec = PoseSpec {
                yaw_deg: yaw,
                pitch_deg: pitch,
                roll_deg: roll,
                scale,
                tx,
                ty,
            };
            let scene = synth_scene(&model, seed, noise, &pose_spec)?;
            write_pts(&scene.noisy_landmarks_2d, &out_pts)?;
            if let Some(path) = out_truth {
                write_pts(&scene.clean_landmarks_2d, &path)?;
            }
            println!("scene written: {} landmarks, noise {noise}", model.n_landmarks());
            Ok(())
        }
        Command::Fit {
            model,
            pts,
            out_report,
            out_obj,
            out_pts,
            no_weighting,
            contour_recorrespond,
            xi1,
            xi2,
            lambda_id,
            lambda_exp,
            max_iter,
            tau,
            min_rel_improvement,
        } => {
            let model = read_model(&model)?;
            let observed = read_pts(&pts)?;
            let defaults = FitConfig::default();
            let config = FitConfig {
                xi1: xi1.unwrap_or(defaults.xi1),
                xi2: xi2.unwrap_or(defaults.xi2),
                lambda_id: lambda_id.unwrap_or(defaults.lambda_id),
                lambda_exp: lambda_exp.unwrap_or(defaults.lambda_exp),
                max_iterations: max_iter.unwrap_or(defaults.max_iterations),
                tau: tau.unwrap_or(defaults.tau),
                min_rel_improvement: min_rel_improvement.unwrap_or(defaults.min_rel_improvement),
                weighting_enabled: !no_weighting,
                contour_recorrespond_enabled: contour_recorrespond,
            };
            let result = fit(&model, &observed, &config)?;
            if let Some(path) = out_report {
                write_fit_report(&FitReport::from_result(&result, &config), &path)?;
            }
            if let Some(path) = out_obj {
                let shape = instantiate_shape(&model, &result.coeffs)?;
                write_obj(&shape, model.triangles.as_deref(), &path)?;
            }
            if let Some(path) = out_pts {
                let estimated = project_model_landmarks(
                    &model,
                    &result.coeffs,
                    &result.pose,
                    &result.landmark_indices,
                )?;
                write_pts(&estimated, &path)?;
            }
            println!(
                "fit: converged {} after {} iterations, landmark error {:?}",
                result.converged,
                result.iterations_run,
                result.best_error()
            );
            Ok(())
        }
        Command::Bench {
            model,
            scenes,
            yaw_bins,
            noise,
            out_report,
            out_scatter,
            lambda_id,
            lambda_exp,
            seed,
        } => {
            let model = read_model(&model)?;
            let defaults = FitConfig::default();
            let config = FitConfig {
                lambda_id: lambda_id.unwrap_or(defaults.lambda_id),
                lambda_exp: lambda_exp.unwrap_or(defaults.lambda_exp),
                ..defaults
            };
            let spec = BenchSpec {
                n_scenes: scenes,
                yaw_bins_deg: yaw_bins,
                noise_spec: noise,
                config_weighted: config,
                config_baseline: FitConfig {
                    weighting_enabled: false,
                    ..config
                },
                seed,
            };
            let report = run_benchmark(&model, &spec)?;
            write_bench_report(&report, &out_report)?;
            if let Some(path) = out_scatter {
                write_scatter_csv(&report.residual_scatter, &path)?;
            }
            for bin in &report.per_bin {
                println!(
                    "yaw {:+.1}: weighted {:?} baseline {:?} improvement {:.2}% wins {}/{}",
                    bin.yaw_deg,
                    bin.mem_weighted,
                    bin.mem_baseline,
                    bin.improvement_percent,
                    bin.weighted_wins,
                    bin.n_scenes
                );
            }
            Ok(())
        }
        Command::Eval { truth_pts, est_pts } => {
            let truth = read_pts(&truth_pts)?;
            let estimated = read_pts(&est_pts)?;
            let value = mem(&[truth], &[estimated])?;
            println!("{value:?}");
            Ok(())
        }
    }
}
