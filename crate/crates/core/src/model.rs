//! PCA statistical shape model and a deterministic synthetic model generator.
//!
//! A shape is a stacked coordinate vector `(X1, Y1, Z1, X2, Y2, Z2, ...)` of
//! `n` mesh vertices; model instances are the mean shape plus a linear
//! combination of identity and expression basis columns, each column scaled
//! by one coefficient.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Leading landmark slots treated as the jaw contour (iBUG 68-point layout).
pub const CONTOUR_SLOTS: usize = 17;

/// Candidate vertices recorded per contour slot by [`synth_model`].
pub const CONTOUR_CANDIDATES: usize = 10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("model dimension {what} must be at least 1")]
    EmptyDimension { what: &'static str },
    #[error("landmark index {index} out of range ({n_vertices} vertices)")]
    LandmarkOutOfRange { index: usize, n_vertices: usize },
    #[error("landmark index {index} appears more than once")]
    DuplicateLandmark { index: usize },
    #[error("{what} standard deviation at component {component} must be > 0, got {value}")]
    NonPositiveStddev {
        what: &'static str,
        component: usize,
        value: f64,
    },
    #[error("triangle vertex {index} out of range ({n_vertices} vertices)")]
    TriangleOutOfRange { index: usize, n_vertices: usize },
    #[error("contour slot {slot} out of range ({n_landmarks} landmark slots)")]
    ContourSlotOutOfRange { slot: usize, n_landmarks: usize },
    #[error("contour slot {slot} has an empty candidate list")]
    EmptyContourCandidates { slot: usize },
    #[error("contour candidate {index} out of range ({n_vertices} vertices)")]
    ContourCandidateOutOfRange { index: usize, n_vertices: usize },
    #[error("infeasible synthetic model spec: {reason}")]
    InfeasibleSpec { reason: String },
}

/// Linear shape model: mean plus identity and expression PCA bases.
///
/// Basis matrices have one row per shape coordinate (`3 * n_vertices`) and
/// one column per mode; `id_stddev` / `exp_stddev` hold the per-mode PCA
/// standard deviations used as a fitting prior. `landmark_indices` names the
/// vertices corresponding to the 2D landmark slots, in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    pub n_vertices: usize,
    pub mean_shape: DVector<f64>,
    pub id_basis: DMatrix<f64>,
    pub id_stddev: DVector<f64>,
    pub exp_basis: DMatrix<f64>,
    pub exp_stddev: DVector<f64>,
    pub landmark_indices: Vec<usize>,
    /// Per contour slot, an ordered list of candidate vertices for
    /// back-projection re-correspondence.
    pub contour_candidates: Option<BTreeMap<usize, Vec<usize>>>,
    pub triangles: Option<Vec<[usize; 3]>>,
}

impl MorphableModel {
    pub fn n_landmarks(&self) -> usize {
        self.landmark_indices.len()
    }

    pub fn m_id(&self) -> usize {
        self.id_basis.ncols()
    }

    pub fn k_exp(&self) -> usize {
        self.exp_basis.ncols()
    }

    /// Checks every structural invariant; readers and generators call this
    /// before handing a model out.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_vertices == 0 {
            return Err(ModelError::EmptyDimension { what: "n_vertices" });
        }
        if self.m_id() == 0 {
            return Err(ModelError::EmptyDimension { what: "m_id" });
        }
        if self.k_exp() == 0 {
            return Err(ModelError::EmptyDimension { what: "k_exp" });
        }
        if self.landmark_indices.is_empty() {
            return Err(ModelError::EmptyDimension { what: "landmarks" });
        }
        let rows = 3 * self.n_vertices;
        if self.mean_shape.len() != rows {
            return Err(ModelError::DimensionMismatch {
                what: "mean_shape",
                expected: rows,
                got: self.mean_shape.len(),
            });
        }
        if self.id_basis.nrows() != rows {
            return Err(ModelError::DimensionMismatch {
                what: "id_basis rows",
                expected: rows,
                got: self.id_basis.nrows(),
            });
        }
        if self.exp_basis.nrows() != rows {
            return Err(ModelError::DimensionMismatch {
                what: "exp_basis rows",
                expected: rows,
                got: self.exp_basis.nrows(),
            });
        }
        if self.id_stddev.len() != self.m_id() {
            return Err(ModelError::DimensionMismatch {
                what: "id_stddev",
                expected: self.m_id(),
                got: self.id_stddev.len(),
            });
        }
        if self.exp_stddev.len() != self.k_exp() {
            return Err(ModelError::DimensionMismatch {
                what: "exp_stddev",
                expected: self.k_exp(),
                got: self.exp_stddev.len(),
            });
        }
        if !self.mean_shape.iter().all(|x| x.is_finite()) {
            return Err(ModelError::NonFinite { what: "mean_shape" });
        }
        if !self.id_basis.iter().all(|x| x.is_finite()) {
            return Err(ModelError::NonFinite { what: "id_basis" });
        }
        if !self.exp_basis.iter().all(|x| x.is_finite()) {
            return Err(ModelError::NonFinite { what: "exp_basis" });
        }
        for (what, stddev) in [("identity", &self.id_stddev), ("expression", &self.exp_stddev)] {
            for (component, &value) in stddev.iter().enumerate() {
                if !(value.is_finite() && value > 0.0) {
                    return Err(ModelError::NonPositiveStddev {
                        what,
                        component,
                        value,
                    });
                }
            }
        }
        let mut seen = HashSet::with_capacity(self.landmark_indices.len());
        for &index in &self.landmark_indices {
            if index >= self.n_vertices {
                return Err(ModelError::LandmarkOutOfRange {
                    index,
                    n_vertices: self.n_vertices,
                });
            }
            if !seen.insert(index) {
                return Err(ModelError::DuplicateLandmark { index });
            }
        }
        if let Some(triangles) = &self.triangles {
            for tri in triangles {
                for &index in tri {
                    if index >= self.n_vertices {
                        return Err(ModelError::TriangleOutOfRange {
                            index,
                            n_vertices: self.n_vertices,
                        });
                    }
                }
            }
        }
        if let Some(contours) = &self.contour_candidates {
            for (&slot, candidates) in contours {
                if slot >= self.n_landmarks() {
                    return Err(ModelError::ContourSlotOutOfRange {
                        slot,
                        n_landmarks: self.n_landmarks(),
                    });
                }
                if candidates.is_empty() {
                    return Err(ModelError::EmptyContourCandidates { slot });
                }
                for &index in candidates {
                    if index >= self.n_vertices {
                        return Err(ModelError::ContourCandidateOutOfRange {
                            index,
                            n_vertices: self.n_vertices,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Identity and expression coefficients of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCoefficients {
    pub alpha_id: DVector<f64>,
    pub alpha_exp: DVector<f64>,
}

impl ShapeCoefficients {
    /// All-zero coefficients sized for `model` (the mean shape).
    pub fn zeros(model: &MorphableModel) -> Self {
        Self {
            alpha_id: DVector::zeros(model.m_id()),
            alpha_exp: DVector::zeros(model.k_exp()),
        }
    }
}

/// Evaluates the linear model: mean + id_basis * alpha_id + exp_basis * alpha_exp.
pub fn instantiate_shape(
    model: &MorphableModel,
    coeffs: &ShapeCoefficients,
) -> Result<DVector<f64>, ModelError> {
    if coeffs.alpha_id.len() != model.m_id() {
        return Err(ModelError::DimensionMismatch {
            what: "alpha_id",
            expected: model.m_id(),
            got: coeffs.alpha_id.len(),
        });
    }
    if coeffs.alpha_exp.len() != model.k_exp() {
        return Err(ModelError::DimensionMismatch {
            what: "alpha_exp",
            expected: model.k_exp(),
            got: coeffs.alpha_exp.len(),
        });
    }
    if !coeffs.alpha_id.iter().all(|x| x.is_finite())
        || !coeffs.alpha_exp.iter().all(|x| x.is_finite())
    {
        return Err(ModelError::NonFinite {
            what: "coefficients",
        });
    }
    Ok(&model.mean_shape + &model.id_basis * &coeffs.alpha_id + &model.exp_basis * &coeffs.alpha_exp)
}

/// Gathers the (X, Y, Z) triplets of `shape` at the given vertex indices,
/// preserving index order.
pub fn landmark_points_3d(
    shape: &DVector<f64>,
    indices: &[usize],
) -> Result<DVector<f64>, ModelError> {
    if shape.len() % 3 != 0 {
        return Err(ModelError::DimensionMismatch {
            what: "shape (multiple of 3)",
            expected: shape.len() / 3 * 3,
            got: shape.len(),
        });
    }
    let n_vertices = shape.len() / 3;
    let mut out = DVector::zeros(3 * indices.len());
    for (slot, &index) in indices.iter().enumerate() {
        if index >= n_vertices {
            return Err(ModelError::LandmarkOutOfRange { index, n_vertices });
        }
        out[3 * slot] = shape[3 * index];
        out[3 * slot + 1] = shape[3 * index + 1];
        out[3 * slot + 2] = shape[3 * index + 2];
    }
    Ok(out)
}

/// Gathers the 3-row blocks of a shape-space matrix (mean, basis) at the given
/// vertex indices. The result has `3 * indices.len()` rows.
pub fn landmark_rows(
    matrix: &DMatrix<f64>,
    indices: &[usize],
) -> Result<DMatrix<f64>, ModelError> {
    if matrix.nrows() % 3 != 0 {
        return Err(ModelError::DimensionMismatch {
            what: "matrix rows (multiple of 3)",
            expected: matrix.nrows() / 3 * 3,
            got: matrix.nrows(),
        });
    }
    let n_vertices = matrix.nrows() / 3;
    let mut out = DMatrix::zeros(3 * indices.len(), matrix.ncols());
    for (slot, &index) in indices.iter().enumerate() {
        if index >= n_vertices {
            return Err(ModelError::LandmarkOutOfRange { index, n_vertices });
        }
        for r in 0..3 {
            for c in 0..matrix.ncols() {
                out[(3 * slot + r, c)] = matrix[(3 * index + r, c)];
            }
        }
    }
    Ok(out)
}

/// Dimensions and field smoothness for [`synth_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthModelSpec {
    pub n_vertices: usize,
    pub m_id: usize,
    pub k_exp: usize,
    pub n_landmarks: usize,
    /// Larger values give lower-frequency deformation fields. Must be > 0.
    pub smoothness: f64,
}

impl Default for SynthModelSpec {
    fn default() -> Self {
        Self {
            n_vertices: 500,
            m_id: 20,
            k_exp: 10,
            n_landmarks: 68,
            smoothness: 1.0,
        }
    }
}

// Half-ellipsoid semi-axes of the mean head, in model units.
const SEMI_AXES: [f64; 3] = [80.0, 100.0, 70.0];
// Random sinusoidal modes summed per column and coordinate axis.
const MODES_PER_AXIS: usize = 6;
// Leading PCA standard deviation as a multiple of sqrt(3 * n_vertices); basis
// columns are unit-norm over all 3n coordinates, so this keeps per-coordinate
// deformation magnitude independent of the vertex count.
const ID_SIGMA_FACTOR: f64 = 2.6;
const ID_SIGMA_DECAY: f64 = 0.85;
const EXP_SIGMA_FACTOR: f64 = 1.95;
const EXP_SIGMA_DECAY: f64 = 0.80;

/// Generates a deterministic synthetic morphable model.
///
/// The mean shape is a half-ellipsoid point cloud (a face-like convex front),
/// basis columns are smooth random deformation fields orthonormalized per
/// basis, standard deviations decay geometrically, and the leading contour
/// landmark slots carry nearest-vertex candidate lists for re-correspondence.
/// The same `(spec, seed)` always yields a bit-identical model.
pub fn synth_model(spec: &SynthModelSpec, seed: u64) -> Result<MorphableModel, ModelError> {
    validate_spec(spec)?;
    let n = spec.n_vertices;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mean_shape = DVector::zeros(3 * n);
    for v in 0..n {
        let dir = loop {
            let d = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            let norm = d.norm();
            if norm > 1e-9 {
                break d / norm;
            }
        };
        mean_shape[3 * v] = SEMI_AXES[0] * dir.x;
        mean_shape[3 * v + 1] = SEMI_AXES[1] * dir.y;
        // Keep the front half only: the camera looks down -z onto z >= 0.
        mean_shape[3 * v + 2] = SEMI_AXES[2] * dir.z.abs();
    }

    let unit_positions: Vec<Vector3<f64>> = (0..n)
        .map(|v| {
            Vector3::new(
                mean_shape[3 * v] / SEMI_AXES[0],
                mean_shape[3 * v + 1] / SEMI_AXES[1],
                mean_shape[3 * v + 2] / SEMI_AXES[2],
            )
        })
        .collect();

    // One joint orthonormalization keeps identity and expression columns
    // mutually orthogonal; without it the two bases overlap heavily inside
    // the small space of smooth fields and alternating solves crawl.
    let (id_basis, exp_basis) = smooth_orthonormal_bases(
        &mean_shape,
        &unit_positions,
        spec.m_id,
        spec.k_exp,
        spec.smoothness,
        &mut rng,
    );

    let sigma_scale = (3 * n) as f64;
    let sigma_scale = sigma_scale.sqrt();
    let id_stddev = geometric_stddevs(spec.m_id, ID_SIGMA_FACTOR * sigma_scale, ID_SIGMA_DECAY);
    let exp_stddev = geometric_stddevs(spec.k_exp, EXP_SIGMA_FACTOR * sigma_scale, EXP_SIGMA_DECAY);

    let landmark_indices = rand::seq::index::sample(&mut rng, n, spec.n_landmarks).into_vec();
    let contour_candidates = build_contour_candidates(&mean_shape, &landmark_indices, n);

    let model = MorphableModel {
        n_vertices: n,
        mean_shape,
        id_basis,
        id_stddev,
        exp_basis,
        exp_stddev,
        landmark_indices,
        contour_candidates: Some(contour_candidates),
        triangles: None,
    };
    model.validate()?;
    Ok(model)
}

fn validate_spec(spec: &SynthModelSpec) -> Result<(), ModelError> {
    let fail = |reason: String| Err(ModelError::InfeasibleSpec { reason });
    if spec.n_landmarks < 4 {
        return fail(format!("need at least 4 landmarks, got {}", spec.n_landmarks));
    }
    if spec.n_vertices < spec.n_landmarks {
        return fail(format!(
            "n_vertices ({}) must be >= n_landmarks ({})",
            spec.n_vertices, spec.n_landmarks
        ));
    }
    if spec.m_id < 1 || spec.k_exp < 1 {
        return fail(format!(
            "m_id ({}) and k_exp ({}) must be >= 1",
            spec.m_id, spec.k_exp
        ));
    }
    if spec.m_id > 3 * spec.n_vertices || spec.k_exp > 3 * spec.n_vertices {
        return fail(format!(
            "basis sizes ({}, {}) exceed shape dimension {}",
            spec.m_id,
            spec.k_exp,
            3 * spec.n_vertices
        ));
    }
    if !(spec.smoothness.is_finite() && spec.smoothness > 0.0) {
        return fail(format!("smoothness must be > 0, got {}", spec.smoothness));
    }
    Ok(())
}

/// Sums a few random sinusoidal modes per column and coordinate axis, removes
/// the similarity-gauge components, and orthonormalizes identity and
/// expression columns together with one QR decomposition.
///
/// The gauge projection drops each column's component along the seven fields
/// a similarity transform of the mean shape can produce (three translations,
/// three linearized rotations, one scaling). PCA bases built from
/// Procrustes-aligned scans are orthogonal to that subspace by construction;
/// leaving it in lets the camera reproduce basis directions and stalls the
/// alternating fit on near-degenerate modes.
fn smooth_orthonormal_bases(
    mean_shape: &DVector<f64>,
    unit_positions: &[Vector3<f64>],
    id_cols: usize,
    exp_cols: usize,
    smoothness: f64,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = unit_positions.len();
    // Wave numbers of a few radians across the face: low-frequency enough to
    // look like plausible deformation modes, high-frequency enough that the
    // columns are not nearly linear in position (near-linear fields mimic
    // rotations and scaling, which makes the pose and coefficient blocks
    // fight each other during fitting).
    let omega = 6.0 / smoothness;
    let cols = id_cols + exp_cols;
    let mut raw = DMatrix::zeros(3 * n, cols);
    for j in 0..cols {
        for axis in 0..3 {
            for _ in 0..MODES_PER_AXIS {
                let amplitude: f64 = rng.sample(StandardNormal);
                let wave = Vector3::new(
                    omega * rng.sample::<f64, _>(StandardNormal),
                    omega * rng.sample::<f64, _>(StandardNormal),
                    omega * rng.sample::<f64, _>(StandardNormal),
                );
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                for (v, p) in unit_positions.iter().enumerate() {
                    raw[(3 * v + axis, j)] += amplitude * (wave.dot(p) + phase).sin();
                }
            }
        }
    }

    let gauge = similarity_gauge_fields(mean_shape);
    raw -= &gauge * gauge.tr_mul(&raw);

    let q = raw.qr().q();
    (
        q.columns(0, id_cols).into_owned(),
        q.columns(id_cols, exp_cols).into_owned(),
    )
}

/// Orthonormal basis of the similarity-transform tangent space at the mean:
/// per-axis translations, linearized rotations, and uniform scaling.
fn similarity_gauge_fields(mean_shape: &DVector<f64>) -> DMatrix<f64> {
    let rows = mean_shape.len();
    let n = rows / 3;
    let mut fields = DMatrix::zeros(rows, 7);
    for v in 0..n {
        let p = Vector3::new(
            mean_shape[3 * v],
            mean_shape[3 * v + 1],
            mean_shape[3 * v + 2],
        );
        for axis in 0..3 {
            fields[(3 * v + axis, axis)] = 1.0;
        }
        // e_x x p, e_y x p, e_z x p
        fields[(3 * v + 1, 3)] = -p.z;
        fields[(3 * v + 2, 3)] = p.y;
        fields[(3 * v, 4)] = p.z;
        fields[(3 * v + 2, 4)] = -p.x;
        fields[(3 * v, 5)] = -p.y;
        fields[(3 * v + 1, 5)] = p.x;
        fields[(3 * v, 6)] = p.x;
        fields[(3 * v + 1, 6)] = p.y;
        fields[(3 * v + 2, 6)] = p.z;
    }
    fields.qr().q()
}

fn geometric_stddevs(count: usize, first: f64, decay: f64) -> DVector<f64> {
    DVector::from_fn(count, |i, _| first * decay.powi(i as i32))
}

fn build_contour_candidates(
    mean_shape: &DVector<f64>,
    landmark_indices: &[usize],
    n_vertices: usize,
) -> BTreeMap<usize, Vec<usize>> {
    let vertex = |v: usize| {
        Vector3::new(
            mean_shape[3 * v],
            mean_shape[3 * v + 1],
            mean_shape[3 * v + 2],
        )
    };
    let n_slots = CONTOUR_SLOTS.min(landmark_indices.len());
    let per_slot = CONTOUR_CANDIDATES.min(n_vertices);
    let mut map = BTreeMap::new();
    for (slot, &nominal) in landmark_indices.iter().enumerate().take(n_slots) {
        let anchor = vertex(nominal);
        let mut by_distance: Vec<(f64, usize)> = (0..n_vertices)
            .map(|v| ((vertex(v) - anchor).norm_squared(), v))
            .collect();
        by_distance.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        map.insert(
            slot,
            by_distance.iter().take(per_slot).map(|&(_, v)| v).collect(),
        );
    }
    map
}
