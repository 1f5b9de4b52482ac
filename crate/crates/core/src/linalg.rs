//! Small dense helpers shared across modules.

use crate::{Matrix, Vector};

/// `w · JᵀJ`, filled from the upper triangle so the result is exactly
/// symmetric.
pub fn weighted_gram(jac: &Matrix, weight: f64) -> Matrix {
    let n = jac.ncols();
    let mut g = Matrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = weight * jac.column(a).dot(&jac.column(b));
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// `vᵀ G v`.
pub fn quadratic_form(g: &Matrix, v: &Vector) -> f64 {
    v.dot(&(g * v))
}

pub fn asymmetry(g: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for a in 0..g.nrows() {
        for b in (a + 1)..g.ncols() {
            worst = worst.max((g[(a, b)] - g[(b, a)]).abs());
        }
    }
    worst
}

pub fn symmetrize(g: &Matrix) -> Matrix {
    (g + g.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(g: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = g.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Principal square root of a symmetric PSD matrix via eigendecomposition,
/// with negative eigenvalues clamped to zero.
pub fn psd_sqrt(g: &Matrix) -> Matrix {
    let eig = symmetrize(g).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    v * Matrix::from_diagonal(&roots) * v.transpose()
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_is_exactly_symmetric() {
        let j = Matrix::from_fn(7, 4, |r, c| ((r * 13 + c * 7) as f64).sin() * 1e3);
        let g = weighted_gram(&j, 0.37);
        assert_eq!(asymmetry(&g), 0.0);
        assert!(max_abs(&(g - j.transpose() * &j * 0.37)) < 1e-8);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = Matrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let s = psd_sqrt(&a);
        assert!(max_abs(&(&s * &s - a)) < 1e-12);
    }
}
