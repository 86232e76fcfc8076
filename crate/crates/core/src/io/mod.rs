//! File formats: binary model container, iBUG-style `.pts` landmark files,
//! Wavefront OBJ export, and JSON/CSV reports.
//!
//! All writers are deterministic byte-for-byte given identical inputs.

mod model_file;
mod obj;
mod pts;
mod report;

pub use model_file::{
    decode_model, encode_model, read_model, write_model, ModelFileError, MODEL_MAGIC,
    MODEL_VERSION,
};
pub use obj::{format_obj, write_obj, ObjError};
pub use pts::{format_pts, parse_pts, read_pts, write_pts, PtsError};
pub use report::{
    read_fit_report, write_bench_report, write_fit_report, write_scatter_csv, FitReport,
    PoseReport, ReportError,
};
