//! Gauss-Hermite quadrature for the physicists' weight `exp(-u²)`.
//!
//! Nodes and weights come from the Golub-Welsch construction: the nodes are
//! the eigenvalues of the symmetric tridiagonal Jacobi matrix with zero
//! diagonal and off-diagonal `sqrt(k/2)`, and each weight is `sqrt(π)` times
//! the squared first component of the corresponding normalized eigenvector.
//! Only the first row of the eigenvector matrix is accumulated while running
//! the implicit-shift QL sweep, so high orders stay cheap.

use crate::error::{Error, Result};

/// Nodes and weights of a Gauss-Hermite rule: `∫ f(u) e^{-u²} du ≈ Σ wⱼ f(uⱼ)`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    /// Apply the rule to an integrand.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Build the Gauss-Hermite rule of the given order (`order >= 2`).
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if order < 2 {
        return Err(Error::InvalidConfig(format!(
            "quadrature order must be at least 2, got {order}"
        )));
    }
    let mut diag = vec![0.0_f64; order];
    let mut off = vec![0.0_f64; order];
    for (k, o) in off.iter_mut().enumerate().take(order - 1) {
        *o = ((k + 1) as f64 / 2.0).sqrt();
    }
    let mut first_row = vec![0.0_f64; order];
    first_row[0] = 1.0;
    tridiag_ql(&mut diag, &mut off, &mut first_row)?;

    let mut idx: Vec<usize> = (0..order).collect();
    idx.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut nodes: Vec<f64> = idx.iter().map(|&j| diag[j]).collect();
    let mut weights: Vec<f64> = idx
        .iter()
        .map(|&j| sqrt_pi * first_row[j] * first_row[j])
        .collect();

    // The rule is symmetric by construction; enforce it exactly so that odd
    // integrands cancel without roundoff residue.
    for j in 0..order / 2 {
        let m = order - 1 - j;
        let x = 0.5 * (nodes[m] - nodes[j]);
        nodes[j] = -x;
        nodes[m] = x;
        let w = 0.5 * (weights[j] + weights[m]);
        weights[j] = w;
        weights[m] = w;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }

    Ok(QuadratureRule {
        nodes,
        weights,
        order,
    })
}

/// Implicit-shift QL sweep for a symmetric tridiagonal matrix, accumulating
/// only the first row of the orthogonal transform. On return `diag` holds the
/// eigenvalues and `row` the first components of the normalized eigenvectors.
fn tridiag_ql(diag: &mut [f64], off: &mut [f64], row: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    off[n - 1] = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= eps * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(Error::PowerIterationStalled {
                    residual: off[l].abs(),
                    iterations: iter,
                });
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0_f64, 1.0_f64);
            let mut p = 0.0_f64;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                f = row[i + 1];
                row[i + 1] = s * row[i] + c * f;
                row[i] = c * row[i] - s * f;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}
