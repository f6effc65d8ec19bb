//! Dense SPD solves: Cholesky with diagonal regularization on failure, or
//! Jacobi-preconditioned conjugate gradients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolverKind {
    #[default]
    Direct,
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSolveInfo {
    /// A diagonal shift was needed before the factorization succeeded.
    pub regularized: bool,
    /// `|H p + g| / |g|` against the unshifted matrix.
    pub relative_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("linear solve broke down: {0}")]
pub struct LinearSolveError(pub String);

const DIRECT_TOL: f64 = 1e-10;
const ITERATIVE_TOL: f64 = 1e-6;
const REGULARIZATION: f64 = 1e-8;
const MAX_SHIFTS: usize = 6;

/// Solves `H p = -g`.
pub fn linear_solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    kind: LinearSolverKind,
) -> Result<(DVector<f64>, LinearSolveInfo), LinearSolveError> {
    if g.iter().any(|v| !v.is_finite()) || h.iter().any(|v| !v.is_finite()) {
        return Err(LinearSolveError("non-finite system".into()));
    }
    if g.is_empty() {
        return Ok((
            DVector::zeros(0),
            LinearSolveInfo { regularized: false, relative_residual: 0.0, iterations: 0 },
        ));
    }
    match kind {
        LinearSolverKind::Direct => direct(h, g),
        LinearSolverKind::Iterative => pcg(h, g),
    }
}

fn residual(h: &DMatrix<f64>, g: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let gn = g.norm();
    if gn == 0.0 {
        return (h * p).norm();
    }
    (h * p + g).norm() / gn
}

fn direct(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<(DVector<f64>, LinearSolveInfo), LinearSolveError> {
    let n = g.len();
    let scale = (h.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    for attempt in 0..=MAX_SHIFTS {
        let mut m = h.clone();
        if shift > 0.0 {
            for i in 0..n {
                m[(i, i)] += shift;
            }
        }
        if let Some(chol) = m.cholesky() {
            let p = chol.solve(&(-g));
            if p.iter().all(|v| v.is_finite()) {
                let info = LinearSolveInfo {
                    regularized: attempt > 0,
                    relative_residual: residual(h, g, &p),
                    iterations: 1,
                };
                return Ok((p, info));
            }
        }
        shift = if shift == 0.0 { REGULARIZATION * scale } else { shift * 100.0 };
    }
    Err(LinearSolveError("Cholesky failed after regularization".into()))
}

fn pcg(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<(DVector<f64>, LinearSolveInfo), LinearSolveError> {
    let n = g.len();
    let inv_diag = h.diagonal().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 });
    let b = -g;
    let bn = b.norm();
    let mut x = DVector::zeros(n);
    if bn == 0.0 {
        return Ok((x, LinearSolveInfo { regularized: false, relative_residual: 0.0, iterations: 0 }));
    }
    let mut r = b.clone();
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 0..(10 * n).max(100) {
        let hp = h * &p;
        let php = p.dot(&hp);
        if !(php > 0.0) {
            return Err(LinearSolveError("matrix is not positive definite".into()));
        }
        let a = rz / php;
        x.axpy(a, &p, 1.0);
        r.axpy(-a, &hp, 1.0);
        if r.norm() <= ITERATIVE_TOL * bn {
            let info = LinearSolveInfo {
                regularized: false,
                relative_residual: residual(h, g, &x),
                iterations: it + 1,
            };
            return Ok((x, info));
        }
        z = r.component_mul(&inv_diag);
        let rz_new = r.dot(&z);
        p = &z + &p * (rz_new / rz);
        rz = rz_new;
    }
    Err(LinearSolveError("conjugate gradients did not converge".into()))
}

/// Tolerance the given solver kind guarantees on the relative residual.
pub fn residual_tolerance(kind: LinearSolverKind) -> f64 {
    match kind {
        LinearSolverKind::Direct => DIRECT_TOL,
        LinearSolverKind::Iterative => ITERATIVE_TOL,
    }
}
