//! Hermitian matrices stored as real vectors, and Euclidean projection onto
//! trace-capped positive semidefinite sets.
//!
//! An `N x N` Hermitian matrix takes `N^2` reals: the diagonal first, then for
//! every pair `i < j` (row-major) the values `sqrt(2) Re M_ij` and
//! `sqrt(2) Im M_ij`. The scaling makes the Frobenius norm equal the Euclidean
//! norm of the embedded vector, so projections and gradients computed on the
//! matrix carry over unchanged.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Number of reals used to store an `n x n` Hermitian matrix.
pub fn embedded_len(n: usize) -> usize {
    n * n
}

/// Writes the embedding of `m` into `out`, which must hold `n^2` entries.
pub fn embed_hermitian_into(m: &DMatrix<Complex64>, out: &mut [f64]) {
    let n = m.nrows();
    let r2 = std::f64::consts::SQRT_2;
    for i in 0..n {
        out[i] = m[(i, i)].re;
    }
    let mut k = n;
    for i in 0..n {
        for j in (i + 1)..n {
            // Average the two triangles so that slightly non-Hermitian input is
            // mapped to its Hermitian part.
            let z = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            out[k] = r2 * z.re;
            out[k + 1] = r2 * z.im;
            k += 2;
        }
    }
}

pub fn embed_hermitian(m: &DMatrix<Complex64>) -> DVector<f64> {
    let mut out = DVector::zeros(embedded_len(m.nrows()));
    embed_hermitian_into(m, out.as_mut_slice());
    out
}

/// Inverse of [`embed_hermitian`].
pub fn unembed_hermitian(v: &[f64], n: usize) -> DMatrix<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        m[(i, i)] = Complex64::new(v[i], 0.0);
    }
    let mut k = n;
    for i in 0..n {
        for j in (i + 1)..n {
            let z = Complex64::new(s * v[k], s * v[k + 1]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 2;
        }
    }
    m
}

/// Projects `v` onto `{w >= 0, sum(w) <= budget}`.
pub fn project_capped_simplex(v: &[f64], budget: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= budget {
        return clipped;
    }
    // Onto the face sum(w) = budget: w = max(v - theta, 0).
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - budget) / (k as f64 + 1.0);
        if x - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Euclidean (Frobenius) projection onto `{M Hermitian, M >= 0, tr M <= budget}`.
///
/// The input is symmetrised first, then its eigenvalues are projected onto the
/// capped simplex and the matrix reassembled.
pub fn project_trace_psd(m: &DMatrix<Complex64>, budget: f64) -> Result<DMatrix<Complex64>> {
    if !(budget >= 0.0) {
        return Err(Error::InvalidModel(format!("trace budget {budget} must be >= 0")));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite {
            what: "matrix to project",
            index: 0,
        });
    }
    let sym = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::try_new(sym, 1e-14, 10_000).ok_or(Error::Eigen)?;
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let proj = project_capped_simplex(&vals, budget);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        proj.iter().map(|x| Complex64::new(*x, 0.0)),
    ));
    let u = &eig.eigenvectors;
    Ok(u * d * u.adjoint())
}

/// Projection of an embedded Hermitian block, in place.
pub fn project_embedded(v: &mut [f64], n: usize, budget: f64) -> Result<()> {
    let m = unembed_hermitian(v, n);
    let p = project_trace_psd(&m, budget)?;
    embed_hermitian_into(&p, v);
    Ok(())
}

/// Eigenvalues of an embedded Hermitian block, ascending.
pub fn embedded_eigenvalues(v: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = unembed_hermitian(v, n);
    let eig = nalgebra::SymmetricEigen::try_new(m, 1e-14, 10_000).ok_or(Error::Eigen)?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn diag(a: f64, b: f64) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(2, 2, &[c(a, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(b, 0.0)])
    }

    #[test]
    fn clips_negative_eigenvalue() {
        let p = project_trace_psd(&diag(-1.0, 2.0), 10.0).unwrap();
        assert_relative_eq!(p[(0, 0)].re, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p[(1, 1)].re, 2.0, epsilon = 1e-12);
        assert!(p[(0, 1)].norm() < 1e-12);
    }

    #[test]
    fn rescales_onto_trace_budget() {
        let p = project_trace_psd(&diag(6.0, 6.0), 10.0).unwrap();
        assert_relative_eq!(p[(0, 0)].re, 5.0, epsilon = 1e-12);
        assert_relative_eq!(p[(1, 1)].re, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn embedding_is_isometric() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, -2.0), c(0.5, 2.0), c(3.0, 0.0)]);
        let v = embed_hermitian(&m);
        let frob: f64 = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert_relative_eq!(v.norm(), frob, epsilon = 1e-12);
        let back = unembed_hermitian(v.as_slice(), 2);
        assert!((back - m).iter().all(|z| z.norm() < 1e-12));
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_idempotent(
            vals in proptest::collection::vec(-5.0f64..5.0, 4),
            budget in 0.1f64..10.0,
        ) {
            let mut v = vals.clone();
            project_embedded(&mut v, 2, budget).unwrap();
            let eig = embedded_eigenvalues(&v, 2).unwrap();
            prop_assert!(eig[0] >= -1e-10);
            prop_assert!(eig.iter().sum::<f64>() <= budget + 1e-9);
            let mut w = v.clone();
            project_embedded(&mut w, 2, budget).unwrap();
            for (a, b) in v.iter().zip(w.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn projection_is_nearest_point(
            vals in proptest::collection::vec(-5.0f64..5.0, 4),
            probe in proptest::collection::vec(-3.0f64..3.0, 4),
            budget in 0.1f64..10.0,
        ) {
            // Any other feasible point is at least as far from the input.
            let mut p = vals.clone();
            project_embedded(&mut p, 2, budget).unwrap();
            let mut q = probe.clone();
            project_embedded(&mut q, 2, budget).unwrap();
            let d = |a: &[f64]| a.iter().zip(vals.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            prop_assert!(d(&p) <= d(&q) + 1e-9);
        }
    }
}
