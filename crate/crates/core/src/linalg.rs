//! Dense symmetric solves shared by the score fit and the Fisher information
//! inversion.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{FsmError, Result};

/// Ratio above which a symmetric system is treated as numerically singular.
pub const SINGULAR_CONDITION: f64 = 1e14;

#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub solution: DMatrix<f64>,
    pub condition_estimate: f64,
    pub used_fallback: bool,
}

/// Cheap condition estimate from the Cholesky diagonal, `(max L_ii / min L_ii)^2`.
fn cholesky_condition(l: &DMatrix<f64>) -> f64 {
    let diag = l.diagonal();
    let max = diag.iter().cloned().fold(0.0_f64, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        (max / min).powi(2)
    } else {
        f64::INFINITY
    }
}

/// Solves `A X = B` for symmetric positive (semi)definite `A`.
///
/// Cholesky first; when it fails the system is solved through the symmetric
/// eigendecomposition, unless `A` is numerically singular.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<SpdSolution> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(FsmError::DimensionMismatch {
            context: "solve_spd",
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    if let Some(chol) = a.clone().cholesky() {
        let condition_estimate = cholesky_condition(&chol.l());
        if condition_estimate < SINGULAR_CONDITION {
            return Ok(SpdSolution {
                solution: chol.solve(b),
                condition_estimate,
                used_fallback: false,
            });
        }
    }

    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < SINGULAR_CONDITION) {
        return Err(FsmError::Singular { condition });
    }
    log::warn!("cholesky failed (condition {condition:.3e}); solving by eigendecomposition");
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let q = &eig.eigenvectors;
    let solution = q * DMatrix::from_diagonal(&inv_vals) * q.transpose() * b;
    Ok(SpdSolution {
        solution,
        condition_estimate: condition,
        used_fallback: true,
    })
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let sol = solve_spd(&a, &b).unwrap();
        assert!(!sol.used_fallback);
        assert!(max_abs(&(&a * &sol.solution - &b)) < 1e-14);
    }

    #[test]
    fn singular_system_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(solve_spd(&a, &b), Err(FsmError::Singular { .. })));
    }
}
