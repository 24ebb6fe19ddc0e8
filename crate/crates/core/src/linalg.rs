//! Dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entry modulus of m - m^H.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Singular values, descending.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol` times the reference scale.
pub fn numerical_rank(m: &CMat, rel_tol: f64, scale: f64) -> usize {
    singular_values(m).iter().filter(|&&s| s > rel_tol * scale).count()
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and
/// the matching orthonormal eigenvectors as columns.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vecs)
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: Complex64,
    pub vector: CVec,
    /// ||M v - lambda v|| / (||M||_F ||v||)
    pub backward_error: f64,
}

/// Eigenvalues and unit eigenvectors of a general complex matrix via the
/// complex Schur form and back substitution on the triangular factor.
pub fn general_eigen(m: &CMat) -> Result<Vec<EigenPair>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let norm = frobenius(m).max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * norm;
    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut x = CVec::zeros(n);
        x[k] = crate::linalg::ONE;
        for j in (0..k).rev() {
            let mut s = ZERO;
            for l in j + 1..=k {
                s += t[(j, l)] * x[l];
            }
            let mut d = t[(j, j)] - lambda;
            if d.norm() < tiny {
                d = c(tiny);
            }
            x[j] = -s / d;
        }
        let mut v = &q * x;
        let vn = v.norm();
        v /= c(vn);
        let r = m * &v - &v * lambda;
        pairs.push(EigenPair { value: lambda, vector: v, backward_error: r.norm() / norm });
    }
    Ok(pairs)
}

/// Solves a x = b by LU and reports the 2-norm condition number of a.
pub fn solve_with_condition(a: &CMat, b: &CVec) -> Result<(CVec, f64)> {
    let s = singular_values(a);
    let cond = match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    };
    let x = a.clone().lu().solve(b).unwrap_or_else(|| CVec::from_element(b.len(), c(f64::NAN)));
    Ok((x, cond))
}
