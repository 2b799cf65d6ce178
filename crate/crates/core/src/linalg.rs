//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues of a symmetric matrix in nondecreasing order.
///
/// Uses symmetric tridiagonalization followed by implicit QR with an
/// iteration cap of `100·n²` sweeps.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let cap = 100 * n * n;
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, cap)
        .ok_or(Error::EigenNoConvergence(cap))?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m)?.first().copied().unwrap_or(0.0))
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m)?.last().copied().unwrap_or(0.0))
}

/// Solve `a x = b` for symmetric positive definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::LinearSolve("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// [`spd_solve`] followed by `rounds` steps of iterative refinement.
pub fn spd_solve_refined(a: &DMatrix<f64>, b: &DVector<f64>, rounds: usize) -> Result<DVector<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::LinearSolve("matrix is not positive definite".into()))?;
    let mut x = chol.solve(b);
    for _ in 0..rounds {
        let r = b - a * &x;
        x += chol.solve(&r);
    }
    Ok(x)
}

pub fn is_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
