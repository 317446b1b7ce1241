//! Small dense linear-algebra helpers: finite-difference Jacobians, norms and
//! conditioned solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot cutoff below which a matrix is treated as singular.
pub const SINGULAR_CUTOFF: f64 = 1e-10;

/// Condition number above which a sensitivity system is rejected.
pub const CONDITION_LIMIT: f64 = 1e10;

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, s| acc.max(*s))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |acc, v| acc.max(*v))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v))
}

/// Central-difference Jacobian of `f` at `x`. The step for coordinate `j` is
/// `rel_step * (1 + |x_j|)`.
pub fn central_jacobian<F>(x: &DVector<f64>, rel_step: f64, mut f: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let step = rel_step * (1.0 + x[j].abs());
        probe[j] = x[j] + step;
        let plus = f(&probe)?;
        probe[j] = x[j] - step;
        let minus = f(&probe)?;
        probe[j] = x[j];
        cols.push((plus - minus) / (2.0 * step));
    }
    if cols.is_empty() {
        let rows = f(x)?.len();
        return Ok(DMatrix::zeros(rows, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Solves `b * X = rhs` through an SVD, rejecting systems whose condition
/// number exceeds [`CONDITION_LIMIT`]. Returns the solution and the condition
/// number.
pub fn solve_conditioned(b: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = b.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, rhs.ncols()), 1.0));
    }
    let svd = b.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !smax.is_finite() || smax == 0.0 {
        return Err(Error::Singular { cond: f64::INFINITY });
    }
    let cond = smax / smin.max(f64::MIN_POSITIVE);
    if smin < SINGULAR_CUTOFF * smax || cond > CONDITION_LIMIT {
        return Err(Error::Singular { cond });
    }
    let sol = svd
        .solve(rhs, SINGULAR_CUTOFF * smax)
        .map_err(|_| Error::Singular { cond })?;
    Ok((sol, cond))
}

/// Minimum-norm least-squares solution of `b * X = rhs`, discarding singular
/// values below `SINGULAR_CUTOFF` relative to the largest.
pub fn solve_pseudo(b: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() == 0 {
        return Ok(DMatrix::zeros(0, rhs.ncols()));
    }
    let svd = b.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !smax.is_finite() || smax == 0.0 {
        return Err(Error::Singular { cond: f64::INFINITY });
    }
    svd.solve(rhs, SINGULAR_CUTOFF * smax)
        .map_err(|_| Error::Singular { cond: f64::INFINITY })
}

/// LU solve for the per-step hot path. Fails only on an exactly or nearly
/// singular pivot.
pub fn solve_lu(b: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() == 0 {
        return Ok(DMatrix::zeros(0, rhs.ncols()));
    }
    let scale = b.amax();
    let lu = b.clone().lu();
    let u = lu.u();
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |acc, p| acc.min(p.abs()));
    if !(min_pivot > SINGULAR_CUTOFF * scale) {
        return Err(Error::Singular {
            cond: scale / min_pivot.max(f64::MIN_POSITIVE),
        });
    }
    lu.solve(rhs).ok_or(Error::Singular { cond: f64::INFINITY })
}

/// Concatenates two vectors.
pub fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jacobian_of_linear_map_is_exact() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let j = central_jacobian(&x, 1e-5, |v| Ok(&a * v)).unwrap();
        assert_relative_eq!(j, a, epsilon = 1e-9);
    }

    #[test]
    fn pseudo_solve_returns_minimum_norm_solution() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rhs = DMatrix::from_column_slice(2, 1, &[2.0, 2.0]);
        let x = solve_pseudo(&b, &rhs).unwrap();
        assert_relative_eq!(x, DMatrix::from_column_slice(2, 1, &[1.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn conditioned_solve_rejects_singular() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let rhs = DMatrix::identity(2, 2);
        assert!(matches!(solve_conditioned(&b, &rhs), Err(Error::Singular { .. })));
        assert!(solve_lu(&b, &rhs).is_err());
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-3.0, 2.0]));
        assert_relative_eq!(spectral_norm(&m), 3.0, epsilon = 1e-12);
        assert_relative_eq!(lambda_max_sym(&m), 2.0, epsilon = 1e-12);
        assert_relative_eq!(lambda_min_sym(&m), -3.0, epsilon = 1e-12);
    }
}
