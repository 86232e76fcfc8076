//! Shared test fixtures and independent oracles.
//!
//! The oracles here deliberately avoid the library's solve path: plain-loop
//! design assembly, hand-rolled Gaussian elimination, and gradient descent
//! with exact line search.

#![allow(dead_code)]

use facefit_core::camera::{EulerAngles, Pose};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One randomized coefficient-solve problem.
pub struct SolveInstance {
    pub basis: DMatrix<f64>,
    pub stddevs: DVector<f64>,
    pub pose: Pose,
    pub fixed: DVector<f64>,
    pub observed: DVector<f64>,
    pub weights: DVector<f64>,
    pub lambda: f64,
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let rotation = EulerAngles {
        pitch: rng.random_range(-0.6..0.6),
        yaw: rng.random_range(-1.0..1.0),
        roll: rng.random_range(-0.6..0.6),
    }
    .to_rotation();
    Pose::new(
        rng.random_range(0.5..3.0),
        rotation,
        Vector3::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            0.0,
        ),
    )
    .unwrap()
}

pub fn random_instance(
    rng: &mut ChaCha8Rng,
    landmarks: usize,
    columns: usize,
    lambda: f64,
    unit_weights: bool,
) -> SolveInstance {
    SolveInstance {
        basis: DMatrix::from_fn(3 * landmarks, columns, |_, _| rng.random_range(-1.0..1.0)),
        stddevs: DVector::from_fn(columns, |_, _| rng.random_range(0.3..3.0)),
        pose: random_pose(rng),
        fixed: DVector::from_fn(3 * landmarks, |_, _| rng.random_range(-30.0..30.0)),
        observed: DVector::from_fn(2 * landmarks, |_, _| rng.random_range(-50.0..50.0)),
        weights: if unit_weights {
            DVector::from_element(landmarks, 1.0)
        } else {
            DVector::from_fn(landmarks, |_, _| rng.random_range(0.2..4.0))
        },
        lambda,
    }
}

/// Plain-loop weighted design assembly: rows of `W_hat P basis` and the
/// weighted target, built element by element.
pub fn naive_design(inst: &SolveInstance) -> (Vec<Vec<f64>>, Vec<f64>) {
    let landmarks = inst.weights.len();
    let columns = inst.basis.ncols();
    let r = &inst.pose.rotation;
    let f = inst.pose.scale;
    let mut design = vec![vec![0.0; columns]; 2 * landmarks];
    let mut target = vec![0.0; 2 * landmarks];
    for i in 0..landmarks {
        let w = inst.weights[i];
        for row in 0..2 {
            for (j, cell) in design[2 * i + row].iter_mut().enumerate() {
                let mut projected = 0.0;
                for axis in 0..3 {
                    projected += r[(row, axis)] * inst.basis[(3 * i + axis, j)];
                }
                *cell = w * f * projected;
            }
            let mut fixed_proj = 0.0;
            for axis in 0..3 {
                fixed_proj += r[(row, axis)] * inst.fixed[3 * i + axis];
            }
            target[2 * i + row] = w * (inst.observed[2 * i + row] - f * fixed_proj);
        }
    }
    (design, target)
}

/// Gaussian elimination with partial pivoting. Returns None when a pivot
/// collapses.
pub fn naive_linear_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let mut pivot = k;
        for i in k + 1..n {
            if a[i][k].abs() > a[pivot][k].abs() {
                pivot = i;
            }
        }
        if a[pivot][k].abs() < 1e-300 {
            return None;
        }
        a.swap(k, pivot);
        b.swap(k, pivot);
        for i in k + 1..n {
            let factor = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= factor * a[k][j];
            }
            b[i] -= factor * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut sum = b[k];
        for j in k + 1..n {
            sum -= a[k][j] * x[j];
        }
        x[k] = sum / a[k][k];
    }
    Some(x)
}

/// Ordinary least squares through naively assembled normal equations,
/// independent of the library path. Valid for unit weights and lambda = 0.
pub fn normal_equations_oracle(inst: &SolveInstance) -> Option<DVector<f64>> {
    let (design, target) = naive_design(inst);
    let columns = inst.basis.ncols();
    let mut normal = vec![vec![0.0; columns]; columns];
    let mut rhs = vec![0.0; columns];
    for (row, &t) in design.iter().zip(target.iter()) {
        for j in 0..columns {
            for k in 0..columns {
                normal[j][k] += row[j] * row[k];
            }
            rhs[j] += row[j] * t;
        }
    }
    naive_linear_solve(normal, rhs).map(DVector::from_vec)
}

/// Objective value computed with naive loops.
pub fn naive_objective(inst: &SolveInstance, alpha: &DVector<f64>) -> f64 {
    let (design, target) = naive_design(inst);
    let mut value = 0.0;
    for (row, &t) in design.iter().zip(target.iter()) {
        let mut fitted = 0.0;
        for (j, &cell) in row.iter().enumerate() {
            fitted += cell * alpha[j];
        }
        value += (t - fitted) * (t - fitted);
    }
    for j in 0..alpha.len() {
        value += inst.lambda * alpha[j] * alpha[j] / inst.stddevs[j];
    }
    value
}

fn naive_gradient(inst: &SolveInstance, alpha: &DVector<f64>) -> DVector<f64> {
    let (design, target) = naive_design(inst);
    let columns = alpha.len();
    let mut grad = DVector::zeros(columns);
    for (row, &t) in design.iter().zip(target.iter()) {
        let mut fitted = 0.0;
        for (j, &cell) in row.iter().enumerate() {
            fitted += cell * alpha[j];
        }
        let residual = t - fitted;
        for j in 0..columns {
            grad[j] += -2.0 * residual * row[j];
        }
    }
    for j in 0..columns {
        grad[j] += 2.0 * inst.lambda * alpha[j] / inst.stddevs[j];
    }
    grad
}

/// Gradient descent with exact line search on the quadratic objective.
pub fn gradient_descent_oracle(inst: &SolveInstance) -> DVector<f64> {
    let mut alpha = DVector::zeros(inst.basis.ncols());
    let mut scale_reference: f64 = 0.0;
    for _ in 0..500_000 {
        let grad = naive_gradient(inst, &alpha);
        let gnorm = grad.norm();
        scale_reference = scale_reference.max(gnorm);
        if gnorm <= 1e-13 * scale_reference.max(1.0) {
            break;
        }
        // For a quadratic, H g comes exactly from a gradient difference.
        let probe = &alpha - &grad;
        let hg = naive_gradient(inst, &probe) - &grad;
        let denom = grad.dot(&(-hg));
        if denom <= 0.0 {
            break;
        }
        let step = grad.norm_squared() / denom;
        alpha -= step * grad;
    }
    alpha
}

/// Central finite differences of the naive objective.
pub fn finite_difference_gradient(inst: &SolveInstance, alpha: &DVector<f64>) -> DVector<f64> {
    let mut grad = DVector::zeros(alpha.len());
    for j in 0..alpha.len() {
        let h = 1e-6 * (1.0 + alpha[j].abs());
        let mut plus = alpha.clone();
        plus[j] += h;
        let mut minus = alpha.clone();
        minus[j] -= h;
        grad[j] = (naive_objective(inst, &plus) - naive_objective(inst, &minus)) / (2.0 * h);
    }
    grad
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
