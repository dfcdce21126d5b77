//! Small complex linear-algebra toolkit on top of nalgebra.
//!
//! Everything here works on dense `DMatrix<Complex64>`. Hermitian inputs are
//! symmetrized as `(A + Aᴴ)/2` before factorization, after checking that the
//! asymmetry is within tolerance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative asymmetry tolerance accepted before Hermitian factorizations.
pub const HERMITIAN_TOL: f64 = 1e-8;
/// Tolerance used by [`matrix_sqrt`] for the Hermitian check.
pub const SQRT_HERMITIAN_TOL: f64 = 1e-10;
/// Negative eigenvalues above `-EIGEN_CLIP_TOL` are clipped to zero.
pub const EIGEN_CLIP_TOL: f64 = 1e-12;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| c(x, 0.0))
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Largest elementwise `|A - Aᴴ|`.
pub fn max_asymmetry(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5, 0.0)
}

fn check_square(a: &CMat, context: &'static str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    Ok(())
}

/// Checks asymmetry relative to the matrix scale and returns the Hermitian part.
pub fn checked_hermitian(a: &CMat, rel_tol: f64) -> Result<CMat> {
    check_square(a, "hermitian matrix")?;
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let asym = max_asymmetry(a);
    if asym > rel_tol * scale {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    Ok(hermitize(a))
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order; column `k` of the returned matrix pairs with value `k`.
pub fn hermitian_eigen(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let h = checked_hermitian(a, HERMITIAN_TOL)?;
    Ok(sorted_eigen(h))
}

fn sorted_eigen(h: CMat) -> (Vec<f64>, CMat) {
    let n = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn eigenvalues_hermitian(a: &CMat) -> Result<Vec<f64>> {
    hermitian_eigen(a).map(|(v, _)| v)
}

/// Rebuilds `V diag(g(λ)) Vᴴ`.
pub fn spectral_map(values: &[f64], vectors: &CMat, g: impl Fn(f64) -> f64) -> CMat {
    let n = values.len();
    let mut scaled = vectors.clone();
    for (k, &lam) in values.iter().enumerate() {
        let s = g(lam);
        for i in 0..n {
            scaled[(i, k)] *= s;
        }
    }
    scaled * vectors.adjoint()
}

/// Principal square root of a Hermitian PSD matrix, `S = Sᴴ`, `S·Sᴴ = H`.
///
/// Eigenvalues in `[-1e-12·max(1, λ_max), 0)` are clipped to zero; anything
/// more negative is rejected as indefinite.
pub fn matrix_sqrt(h: &CMat) -> Result<CMat> {
    let herm = checked_hermitian(h, SQRT_HERMITIAN_TOL)?;
    let (values, vectors) = sorted_eigen(herm);
    let top = values.first().copied().unwrap_or(0.0).max(1.0);
    if let Some(&min) = values.last() {
        if min < -EIGEN_CLIP_TOL * top {
            return Err(Error::Indefinite {
                min_eigenvalue: min,
            });
        }
    }
    Ok(spectral_map(&values, &vectors, |l| l.max(0.0).sqrt()))
}

/// Natural log-determinant of a Hermitian positive definite matrix via Cholesky.
pub fn logdet_hpd(a: &CMat) -> Result<f64> {
    let h = checked_hermitian(a, HERMITIAN_TOL)?;
    let chol = h
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("log-determinant argument"))?;
    let l = chol.l_dirty();
    Ok((0..l.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// `ln|S + G| − ln|S|` for Hermitian positive definite `S` and Hermitian PSD
/// `G`, computed as `Σ ln(1 + λ_i)` over the eigenvalues of `L⁻¹GL⁻ᴴ`
/// (`S = LLᴴ`) so that a small update does not cancel.
pub fn logdet_update(s: &CMat, g: &CMat) -> Result<f64> {
    let h = checked_hermitian(s, HERMITIAN_TOL)?;
    let chol = h
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("log-determinant base"))?;
    let l = chol.l();
    let half = l
        .solve_lower_triangular(&hermitize(g))
        .ok_or(Error::NotPositiveDefinite("log-determinant base"))?;
    let whitened = l
        .solve_lower_triangular(&half.adjoint())
        .ok_or(Error::NotPositiveDefinite("log-determinant base"))?;
    let values = eigenvalues_hermitian(&hermitize(&whitened))?;
    if values.iter().any(|&v| v <= -1.0) {
        return Err(Error::NotPositiveDefinite("log-determinant update"));
    }
    Ok(values.iter().map(|v| v.ln_1p()).sum())
}

pub fn inverse_hpd(a: &CMat) -> Result<CMat> {
    let h = checked_hermitian(a, HERMITIAN_TOL)?;
    let chol = h
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("inverse argument"))?;
    Ok(hermitize(&chol.inverse()))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn trace_re(a: &CMat) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)].re).sum()
}

pub fn frobenius_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logdet_update_matches_difference() {
        let s = CMat::from_fn(3, 3, |i, j| if i == j { c(2.0 + i as f64, 0.0) } else { c(0.1, 0.05 * (i as f64 - j as f64)) });
        let g = CMat::from_fn(3, 3, |i, j| c(0.3 / (1.0 + (i + j) as f64), 0.0));
        let direct = logdet_hpd(&(&s + &g)).unwrap() - logdet_hpd(&s).unwrap();
        assert!((logdet_update(&s, &g).unwrap() - direct).abs() < 1e-13);
        // tiny update: ln(1 + ε) per direction
        let eps = 1e-14;
        let tiny = logdet_update(&identity(2), &(identity(2) * c(eps, 0.0))).unwrap();
        assert!((tiny / (2.0 * eps) - 1.0).abs() < 1e-12, "{tiny:e}");
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let i3 = identity(3);
        assert!((matrix_sqrt(&i3).unwrap() - &i3).norm() < 1e-14);

        let d = CMat::from_diagonal(&CVec::from_vec(vec![c(4.0, 0.0), c(9.0, 0.0)]));
        let s = matrix_sqrt(&d).unwrap();
        assert!((s[(0, 0)].re - 2.0).abs() < 1e-14);
        assert!((s[(1, 1)].re - 3.0).abs() < 1e-14);
        assert!(s[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn sqrt_reconstructs_complex_hermitian() {
        let a = CMat::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.5, 0.3), c(0.5, -0.3), c(1.0, 0.0)]);
        let s = matrix_sqrt(&a).unwrap();
        assert!((&s * s.adjoint() - &a).norm() < 1e-12);
        assert!(max_asymmetry(&s) < 1e-14);
    }

    #[test]
    fn sqrt_clips_rank_deficient() {
        let v = CVec::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let a = &v * v.adjoint();
        let s = matrix_sqrt(&a).unwrap();
        assert!((&s * s.adjoint() - &a).norm() < 1e-10);
    }

    #[test]
    fn sqrt_rejects_bad_input() {
        let non_herm = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(matrix_sqrt(&non_herm), Err(Error::NotHermitian { .. })));
        let indef = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(matrix_sqrt(&indef), Err(Error::Indefinite { .. })));
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let a = CMat::from_row_slice(2, 2, &[c(3.0, 0.0), c(1.0, 1.0), c(1.0, -1.0), c(2.0, 0.0)]);
        let expect: f64 = eigenvalues_hermitian(&a).unwrap().iter().map(|l| l.ln()).sum();
        assert!((logdet_hpd(&a).unwrap() - expect).abs() < 1e-13);
        let inv = inverse_hpd(&a).unwrap();
        assert!((&inv * &a - identity(2)).norm() < 1e-13);
    }

    #[test]
    fn eigen_is_sorted_descending() {
        let d = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(5.0, 0.0), c(3.0, 0.0)]));
        let (vals, vecs) = hermitian_eigen(&d).unwrap();
        assert_eq!(vals, vec![5.0, 3.0, 1.0]);
        assert!((spectral_map(&vals, &vecs, |l| l) - d).norm() < 1e-13);
    }
}
