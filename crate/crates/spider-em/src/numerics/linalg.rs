//! Small dense SPD kernels: Cholesky factorization, triangular solves and a
//! power-iteration bound on the spectrum. Dimensions in this crate stay in
//! the tens, so plain loops over `ndarray` storage are all that is needed.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Cholesky factor `L` (lower triangular) with `L Lᵀ = a`.
///
/// Fails on the first non-positive pivot.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky expects a square matrix");
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let djj = diag.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solve `L y = rhs` (forward substitution).
pub fn solve_lower(l: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>> {
    let n = l.nrows();
    let mut y = rhs.clone();
    for i in 0..n {
        for k in 0..i {
            let t = y[k];
            y[i] -= l[(i, k)] * t;
        }
        let d = l[(i, i)];
        if d == 0.0 {
            return Err(Error::SingularTriangular { index: i });
        }
        y[i] /= d;
    }
    Ok(y)
}

/// Solve `Lᵀ x = rhs` (back substitution).
pub fn solve_lower_transpose(l: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>> {
    let n = l.nrows();
    let mut x = rhs.clone();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let t = x[k];
            x[i] -= l[(k, i)] * t;
        }
        let d = l[(i, i)];
        if d == 0.0 {
            return Err(Error::SingularTriangular { index: i });
        }
        x[i] /= d;
    }
    Ok(x)
}

/// Solve `A x = rhs` given the Cholesky factor `L` of `A`.
pub fn solve_spd(l: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>> {
    let y = solve_lower(l, rhs)?;
    solve_lower_transpose(l, &y)
}

/// Largest eigenvalue of a symmetric PD matrix by power iteration with a
/// Rayleigh-quotient stopping rule.
pub fn max_eigenvalue(a: &Array2<f64>, rel_tol: f64, max_iter: usize) -> Result<f64> {
    let n = a.nrows();
    let mut v = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
    // Deterministic tie-breaking component so v is never orthogonal to the
    // dominant eigenvector of a symmetric matrix with sign structure.
    for (i, x) in v.iter_mut().enumerate() {
        *x += 1e-3 * ((i as f64) + 1.0) / (n as f64);
    }
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);

    let mut lambda = 0.0_f64;
    for it in 0..max_iter {
        let w = a.dot(&v);
        let new_lambda = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return Err(Error::PowerIterationStalled {
                residual: f64::INFINITY,
                iterations: it,
            });
        }
        v = w / wn;
        if (new_lambda - lambda).abs() <= rel_tol * new_lambda.abs().max(f64::MIN_POSITIVE) {
            return Ok(new_lambda);
        }
        lambda = new_lambda;
    }
    // Residual of the eigen equation for diagnostics.
    let w = a.dot(&v);
    let residual = (&w - &(&v * lambda)).dot(&(&w - &(&v * lambda))).sqrt();
    Err(Error::PowerIterationStalled {
        residual,
        iterations: max_iter,
    })
}

/// Smallest eigenvalue of `A⁻¹` for SPD `A`, computed as `1 / λ_max(A)`.
pub fn min_eigenvalue_of_inverse(a: &Array2<f64>) -> Result<f64> {
    Ok(1.0 / max_eigenvalue(a, 1e-10, 100_000)?)
}

/// Relative asymmetry `max |A - Aᵀ| / max |A|`.
pub fn symmetry_error(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut num = 0.0_f64;
    let mut den = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            num = num.max((a[(i, j)] - a[(j, i)]).abs());
            den = den.max(a[(i, j)].abs());
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Relative reconstruction error `max |L Lᵀ - A| / max |A|`.
pub fn reconstruction_error(l: &Array2<f64>, a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut num = 0.0_f64;
    let mut den = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..=i.min(j) {
                s += l[(i, k)] * l[(j, k)];
            }
            num = num.max((s - a[(i, j)]).abs());
            den = den.max(a[(i, j)].abs());
        }
    }
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Quadratic form `vᵀ A v`.
pub fn quadratic_form(a: &Array2<f64>, v: &Array1<f64>) -> f64 {
    v.dot(&a.dot(v))
}
