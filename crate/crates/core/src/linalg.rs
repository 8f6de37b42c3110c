//! Small dense linear-algebra helpers: spectral radius via power iteration.

use ndarray::{Array1, Array2};

use crate::{Error, Result};

const MAX_POWER_ITERS: usize = 200_000;

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration with Rayleigh-quotient estimates.
///
/// `tol` is a relative tolerance on successive eigenvalue estimates. The
/// start vector is a fixed, slightly tilted all-ones vector so results are
/// deterministic; the tilt avoids starting orthogonal to the dominant
/// eigenvector on structured matrices.
pub fn spectral_radius_symmetric(m: &Array2<f64>, tol: f64) -> Result<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix must be square");
    if n == 0 {
        return Ok(0.0);
    }
    if m.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }

    let mut v: Array1<f64> = Array1::from_iter((0..n).map(|i| 1.0 + 1e-3 * (i as f64 + 1.0)));
    let norm = v.dot(&v).sqrt();
    v /= norm;

    let mut lambda = 0.0_f64;
    for _ in 0..MAX_POWER_ITERS {
        let mv = m.dot(&v);
        let next = v.dot(&mv);
        let mv_norm = mv.dot(&mv).sqrt();
        if mv_norm == 0.0 {
            // v landed in the null space; restart from a shifted vector.
            v = Array1::from_iter((0..n).map(|i| ((i + 1) as f64).sin() + 1.5));
            let norm = v.dot(&v).sqrt();
            v /= norm;
            continue;
        }
        v = mv / mv_norm;
        if (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::NonConvergence(format!(
        "power iteration exceeded {MAX_POWER_ITERS} iterations (last estimate {lambda})"
    )))
}
