//! Independent verification routes used by the validation command and the
//! test suites: adaptive Simpson integration, a brute-force constrained
//! minimizer for the weighted prox, quantile stratification of a density,
//! and central finite differences.
//!
//! These deliberately avoid the algebraic shortcuts used by the production
//! paths so that agreement between the two is meaningful.

use ndarray::{Array1, Array2};

use crate::numerics::linalg::{cholesky, solve_lower_transpose};

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// `count` quantile points of an unnormalized density on `[lo, hi]`,
/// computed by inverting a dense trapezoid CDF.
pub fn stratified_quantiles<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let grid = 16 * 1024;
    let h = (hi - lo) / grid as f64;
    let mut cdf = Vec::with_capacity(grid + 1);
    cdf.push(0.0);
    let mut prev = f(lo);
    let mut acc = 0.0;
    for j in 1..=grid {
        let x = lo + h * j as f64;
        let cur = f(x);
        acc += 0.5 * h * (prev + cur);
        cdf.push(acc);
        prev = cur;
    }
    let total = acc;
    let mut out = Vec::with_capacity(count);
    let mut j = 0usize;
    for q in 0..count {
        let target = total * (q as f64 + 0.5) / count as f64;
        while j + 1 < cdf.len() && cdf[j + 1] < target {
            j += 1;
        }
        let seg = cdf[j + 1] - cdf[j];
        let frac = if seg > 0.0 { (target - cdf[j]) / seg } else { 0.5 };
        out.push(lo + h * (j as f64 + frac));
    }
    out
}

/// Brute-force minimizer of `½ (s - s')ᵀ Ω (s - s')` over the ellipsoid
/// `{s : sᵀ Ω s ≤ radius2}` for dimensions up to 3.
///
/// Works in the whitened coordinates `u = Lᵀ s` (with `Ω = L Lᵀ`), where the
/// problem becomes the Euclidean projection of `u'` onto a centred ball. If
/// `u'` is infeasible the minimizer lies on the sphere, which is enumerated
/// by an angular grid and refined by golden-section search; no KKT algebra
/// is reused from the production prox.
pub fn prox_brute_force(omega: &Array2<f64>, radius2: f64, s_prime: &Array1<f64>) -> Array1<f64> {
    let d = s_prime.len();
    assert!(d >= 1 && d <= 3, "brute-force prox supports d in 1..=3");
    let l = cholesky(omega).expect("omega must be SPD");
    // u = Lᵀ s
    let mut u_prime = Array1::<f64>::zeros(d);
    for i in 0..d {
        for j in 0..d {
            u_prime[i] += l[(j, i)] * s_prime[j];
        }
    }
    let r = radius2.sqrt();
    let norm2 = u_prime.dot(&u_prime);
    let u_star = if norm2 <= radius2 {
        u_prime.clone()
    } else {
        let objective = |u: &Array1<f64>| {
            let mut acc = 0.0;
            for i in 0..d {
                acc += (u[i] - u_prime[i]).powi(2);
            }
            acc
        };
        match d {
            1 => {
                let cands = [Array1::from(vec![r]), Array1::from(vec![-r])];
                cands
                    .into_iter()
                    .min_by(|a, b| objective(a).total_cmp(&objective(b)))
                    .unwrap()
            }
            2 => {
                let point = |phi: f64| Array1::from(vec![r * phi.cos(), r * phi.sin()]);
                let score = |phi: f64| objective(&point(phi));
                let coarse = 1 << 12;
                let mut best = 0usize;
                let mut best_val = f64::INFINITY;
                for j in 0..coarse {
                    let phi = 2.0 * std::f64::consts::PI * j as f64 / coarse as f64;
                    let v = score(phi);
                    if v < best_val {
                        best_val = v;
                        best = j;
                    }
                }
                let step = 2.0 * std::f64::consts::PI / coarse as f64;
                let phi = golden_min(
                    &score,
                    best as f64 * step - step,
                    best as f64 * step + step,
                    1e-13,
                );
                point(phi)
            }
            _ => {
                let point = |theta: f64, phi: f64| {
                    Array1::from(vec![
                        r * theta.sin() * phi.cos(),
                        r * theta.sin() * phi.sin(),
                        r * theta.cos(),
                    ])
                };
                let score = |theta: f64, phi: f64| objective(&point(theta, phi));
                let (nt, np) = (256, 512);
                let mut best = (0usize, 0usize);
                let mut best_val = f64::INFINITY;
                for a in 0..=nt {
                    let theta = std::f64::consts::PI * a as f64 / nt as f64;
                    for b in 0..np {
                        let phi = 2.0 * std::f64::consts::PI * b as f64 / np as f64;
                        let v = score(theta, phi);
                        if v < best_val {
                            best_val = v;
                            best = (a, b);
                        }
                    }
                }
                let mut theta = std::f64::consts::PI * best.0 as f64 / nt as f64;
                let mut phi = 2.0 * std::f64::consts::PI * best.1 as f64 / np as f64;
                let dt = std::f64::consts::PI / nt as f64;
                let dp = 2.0 * std::f64::consts::PI / np as f64;
                // Alternate golden refinements in each angle.
                for _ in 0..40 {
                    theta = golden_min(&|t| score(t, phi), theta - dt, theta + dt, 1e-14);
                    phi = golden_min(&|p| score(theta, p), phi - dp, phi + dp, 1e-14);
                }
                point(theta, phi)
            }
        }
    };
    // s = L⁻ᵀ u
    solve_lower_transpose(&l, &u_star).expect("triangular solve")
}

fn golden_min<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Central-difference gradient of a scalar function.
pub fn central_gradient<F: Fn(&Array1<f64>) -> f64>(f: &F, x: &Array1<f64>, h: f64) -> Array1<f64> {
    let d = x.len();
    let mut g = Array1::<f64>::zeros(d);
    for j in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        g[j] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}
