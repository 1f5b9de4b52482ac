use crate::error::{Error, Result};
use crate::Vector;

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vector,
    pub iterations: usize,
    /// `‖A x − b‖ / ‖b‖` at exit (0 for `b = 0`).
    pub relative_residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for `A x = b` with `A` given only as a product.
pub fn cg_solve<F>(matvec: F, b: &Vector, tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    F: Fn(&Vector) -> Vector,
{
    let b_norm = b.norm();
    let mut x = Vector::zeros(b.len());
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut iterations = 0;
    while iterations < max_iter && rr.sqrt() > tol * b_norm {
        let ap = matvec(&p);
        let curvature = p.dot(&ap);
        if !(curvature > 0.0) {
            return Err(Error::NotPositiveDefinite {
                iteration: iterations,
                curvature,
            });
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_next = r.norm_squared();
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
        iterations += 1;
    }
    let relative_residual = rr.sqrt() / b_norm;
    Ok(CgOutcome {
        solution: x,
        iterations,
        relative_residual,
        converged: relative_residual <= tol,
    })
}
