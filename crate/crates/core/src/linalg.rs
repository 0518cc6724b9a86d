use nalgebra::{linalg::Cholesky, DMatrix, Dyn};

use crate::{Error, Result};

/// Cholesky factor of a symmetric positive definite matrix, with a
/// condition estimate on failure.
pub(crate) fn cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let condition_estimate = diagonal_spread(&m);
    Cholesky::new(m).ok_or(Error::SingularSystem { condition_estimate })
}

/// Explicit inverse of an SPD matrix, symmetrized.
pub(crate) fn spd_inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Ratio of the largest to the smallest diagonal magnitude; a cheap lower
/// bound on the condition number of an SPD matrix.
fn diagonal_spread(m: &DMatrix<f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for d in m.diagonal().iter() {
        let d = libm::fabs(*d);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// ‖a − b‖_F / max(‖b‖_F, tiny).
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    diff / b.norm().max(f64::MIN_POSITIVE)
}
