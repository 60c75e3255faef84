use crate::error::{Error, Result};

/// Condition-number estimate from the coefficients of a completed PCG run.
///
/// CG implicitly builds a Lanczos tridiagonal matrix whose extreme eigenvalues
/// approximate (from the inside) the extreme eigenvalues of the preconditioned
/// operator:
///
/// ```text
/// T[i][i]   = 1/alpha_i + beta_{i-1}/alpha_{i-1}   (beta_{-1} = 0)
/// T[i][i+1] = sqrt(beta_i)/alpha_i
/// ```
///
/// Requires at least two iterations of history; `betas` must be one shorter
/// than `alphas`.
pub fn lanczos_cond_estimate(alphas: &[f64], betas: &[f64]) -> Result<f64> {
    if alphas.len() < 2 {
        return Err(Error::InsufficientKrylovHistory { got: alphas.len() });
    }
    if betas.len() + 1 != alphas.len() {
        return Err(Error::Contract(format!(
            "expected betas.len() == alphas.len() - 1, got {} and {}",
            betas.len(),
            alphas.len()
        )));
    }
    let n = alphas.len();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n]; // e[i] couples rows i-1 and i
    d[0] = 1.0 / alphas[0];
    for i in 1..n {
        d[i] = 1.0 / alphas[i] + betas[i - 1] / alphas[i - 1];
        e[i] = betas[i - 1].max(0.0).sqrt() / alphas[i - 1];
    }
    let (lo, hi) = tridiag_extreme_eigenvalues(&d, &e);
    if lo <= 0.0 {
        return Err(Error::OperatorNotSpd(format!(
            "Lanczos matrix has non-positive eigenvalue {lo:e}"
        )));
    }
    Ok(hi / lo)
}

/// Smallest and largest eigenvalue of a symmetric tridiagonal matrix by
/// bisection on Sturm-sequence counts.
fn tridiag_extreme_eigenvalues(d: &[f64], e: &[f64]) -> (f64, f64) {
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i].abs() } else { 0.0 } + if i + 1 < n { e[i + 1].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let scale = (hi - lo).max(hi.abs()).max(lo.abs()).max(1e-300);
    let count = |x: f64| {
        let mut c = 0;
        let mut q = 1.0f64;
        let tiny = f64::MIN_POSITIVE / f64::EPSILON;
        for i in 0..n {
            q = d[i] - x - if i == 0 { 0.0 } else { e[i] * e[i] / q };
            if q.abs() < tiny {
                q = -tiny;
            }
            if q < 0.0 {
                c += 1;
            }
        }
        c
    };
    let bisect = |idx: usize| {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..120 {
            let mid = 0.5 * (a + b);
            if count(mid) <= idx {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= 4.0 * f64::EPSILON * scale {
                break;
            }
        }
        0.5 * (a + b)
    };
    (bisect(0), bisect(n - 1))
}
