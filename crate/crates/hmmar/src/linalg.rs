//! Small dense linear-algebra helpers shared by the model and stability code.

use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` by LU with partial pivoting. Returns None when singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<Vec<f64>> {
    let lu = a.clone().lu();
    let x = lu.solve(b)?;
    let sol: Vec<f64> = x.iter().copied().collect();
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(sol)
}

/// Spectral radius of a real square matrix: max modulus over the (possibly
/// complex) eigenvalues of the Schur form.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)].abs();
    }
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
}

/// Infinity-norm condition number estimate; infinite when the matrix does not
/// invert.
pub fn condition_inf(a: &DMatrix<f64>) -> f64 {
    let norm = inf_norm(a);
    match a.clone().try_inverse() {
        Some(inv) => norm * inf_norm(&inv),
        None => f64::INFINITY,
    }
}

fn inf_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
}

/// P * diag(d), the product that drives the stability recursions.
pub fn times_diag(p: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut out = p.clone();
    for j in 0..out.ncols() {
        for i in 0..out.nrows() {
            out[(i, j)] *= d[j];
        }
    }
    out
}
