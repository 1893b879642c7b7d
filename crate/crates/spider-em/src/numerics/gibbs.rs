//! Pólya-Gamma Gibbs kernel for the scalar tilted-logistic posterior
//!
//!   p(z) ∝ (1 + exp(-y c z))⁻¹ · exp(z m / σ²) · exp(-z² / (2σ²)).
//!
//! Augmenting the logistic factor with ω ~ PG(1, ·) makes both conditionals
//! explicit: ω | z is PG(1, c·z) and z | ω is Gaussian with precision
//! 1/σ² + ω c² and mean (m/σ² + y c/2) / (1/σ² + ω c²).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::polya_gamma::sample_pg1;
use crate::numerics::rng::RngStream;

/// Parameters of the scalar posterior for one example.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorParams {
    /// Covariate norm ‖X_i‖ (zero degenerates to a constant likelihood).
    pub c: f64,
    /// Label in {-1, +1}.
    pub y: f64,
    /// Mean of the Gaussian factor, ⟨X_i, θ⟩ / ‖X_i‖.
    pub m: f64,
    /// Variance of the Gaussian factor.
    pub sigma2: f64,
}

/// Chain state: the current scalar latent.
#[derive(Debug, Clone, Copy)]
pub struct GibbsState {
    pub z: f64,
    pub params: PosteriorParams,
}

impl GibbsState {
    /// Start the chain at the mode proxy m + y c σ²/2 (the mean of the
    /// Gaussian conditional at ω = 0).
    pub fn init(params: PosteriorParams) -> Self {
        let z = params.m + params.y * params.c * params.sigma2 / 2.0;
        GibbsState { z, params }
    }
}

/// One full Gibbs sweep: draw ω | z then z | ω.
pub fn gibbs_step(state: &GibbsState, stream: &mut RngStream) -> GibbsState {
    let p = state.params;
    let omega = sample_pg1(p.c * state.z, stream);
    let precision = 1.0 / p.sigma2 + omega * p.c * p.c;
    let mean = (p.m / p.sigma2 + p.y * p.c / 2.0) / precision;
    let noise: f64 = stream.sample(StandardNormal);
    GibbsState {
        z: mean + noise / precision.sqrt(),
        params: p,
    }
}

/// Mean of `samples` post-warmup draws of z.
pub fn chain_mean(params: PosteriorParams, warmup: usize, samples: usize, stream: &mut RngStream) -> f64 {
    let mut state = GibbsState::init(params);
    for _ in 0..warmup {
        state = gibbs_step(&state, stream);
    }
    let mut acc = 0.0;
    for _ in 0..samples {
        state = gibbs_step(&state, stream);
        acc += state.z;
    }
    acc / samples as f64
}

/// Exact i.i.d. draw from the posterior by rejection from the Gaussian
/// factor: propose z ~ N(m, σ²) and accept with probability
/// (1 + exp(-y c z))⁻¹ ≤ 1.
pub fn sample_posterior_iid(params: PosteriorParams, stream: &mut RngStream) -> f64 {
    let sigma = params.sigma2.sqrt();
    loop {
        let eps: f64 = stream.sample(StandardNormal);
        let z = params.m + sigma * eps;
        if stream.uniform() < sigmoid(params.y * params.c * z) {
            return z;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quadrature::gauss_hermite;
    use crate::numerics::rng::{derive_stream, Role};

    /// Posterior moments E[z^k], k = 1..4, by Gauss-Hermite quadrature.
    fn quad_moments_raw(p: PosteriorParams) -> [f64; 4] {
        let rule = gauss_hermite(200).unwrap();
        let scale = (2.0 * p.sigma2).sqrt();
        let mut acc = [0.0_f64; 5];
        for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
            let z = p.m + scale * u;
            // Gaussian factor recentred at m; the exp(m²/2σ²) constant cancels.
            let g = w * sigmoid(p.y * p.c * z);
            let mut zp = 1.0;
            for a in acc.iter_mut() {
                *a += g * zp;
                zp *= z;
            }
        }
        [
            acc[1] / acc[0],
            acc[2] / acc[0],
            acc[3] / acc[0],
            acc[4] / acc[0],
        ]
    }

    /// Posterior mean and variance by Gauss-Hermite quadrature.
    fn quad_moments(p: PosteriorParams) -> (f64, f64) {
        let m = quad_moments_raw(p);
        (m[0], m[1] - m[0] * m[0])
    }

    #[test]
    fn long_run_mean_matches_quadrature() {
        let p = PosteriorParams {
            c: 2.0,
            y: 1.0,
            m: 0.4,
            sigma2: 0.5,
        };
        let (mean, var) = quad_moments(p);
        let n = 200_000;
        let mut stream = derive_stream(301, 0, 0, 0, Role::Aux);
        let est = chain_mean(p, 50, n, &mut stream);
        // Conservative error bar: i.i.d. standard error inflated for
        // autocorrelation of the chain.
        let se = (var / n as f64).sqrt() * 3.0;
        assert!((est - mean).abs() <= 5.0 * se, "est {est}, quad {mean}");
    }

    #[test]
    fn degenerate_likelihood_recovers_gaussian() {
        // c = 0 makes the likelihood constant; the marginal of the chain is
        // exactly N(m, σ²).
        let p = PosteriorParams {
            c: 0.0,
            y: 1.0,
            m: -0.7,
            sigma2: 0.3,
        };
        let n = 200_000;
        let mut stream = derive_stream(303, 0, 0, 0, Role::Aux);
        let mut state = GibbsState::init(p);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            state = gibbs_step(&state, &mut stream);
            s1 += state.z;
            s2 += state.z * state.z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let se_mean = (p.sigma2 / n as f64).sqrt();
        assert!((mean - p.m).abs() <= 5.0 * se_mean);
        assert!((var - p.sigma2).abs() <= 5.0 * p.sigma2 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn same_stream_same_trajectory() {
        let p = PosteriorParams {
            c: 1.5,
            y: -1.0,
            m: 0.2,
            sigma2: 0.1,
        };
        let mut a = derive_stream(305, 0, 0, 0, Role::Aux);
        let mut b = derive_stream(305, 0, 0, 0, Role::Aux);
        let mut sa = GibbsState::init(p);
        let mut sb = GibbsState::init(p);
        for _ in 0..200 {
            sa = gibbs_step(&sa, &mut a);
            sb = gibbs_step(&sb, &mut b);
            assert_eq!(sa.z, sb.z);
        }
    }

    #[test]
    fn iid_sampler_matches_quadrature() {
        let p = PosteriorParams {
            c: 3.0,
            y: -1.0,
            m: 0.1,
            sigma2: 0.4,
        };
        let (mean, var) = quad_moments(p);
        let n = 200_000;
        let mut stream = derive_stream(307, 0, 0, 0, Role::Aux);
        let mut acc = 0.0;
        for _ in 0..n {
            acc += sample_posterior_iid(p, &mut stream);
        }
        let est = acc / n as f64;
        let se = (var / n as f64).sqrt();
        assert!((est - mean).abs() <= 5.0 * se, "est {est}, quad {mean}");
    }

    /// One sweep from a stationary start preserves the first two moments.
    #[test]
    fn invariance_from_stratified_start() {
        let instances = [
            PosteriorParams { c: 1.0, y: 1.0, m: 0.0, sigma2: 0.5 },
            PosteriorParams { c: 2.5, y: -1.0, m:  0.6, sigma2: 0.2 },
            PosteriorParams { c: 0.7, y: 1.0, m: -0.9, sigma2: 1.0 },
        ];
        for (idx, &p) in instances.iter().enumerate() {
            let raw = quad_moments_raw(p);
            let (mean, second) = (raw[0], raw[1]);
            let var = second - mean * mean;
            let var_of_z2 = raw[3] - second * second;
            let strata = crate::oracle::stratified_quantiles(
                |z| {
                    sigmoid(p.y * p.c * z)
                        * (-((z - p.m) * (z - p.m)) / (2.0 * p.sigma2)).exp()
                },
                p.m - 10.0 * p.sigma2.sqrt(),
                p.m + 10.0 * p.sigma2.sqrt(),
                200,
            );
            let chains = 100_000;
            let mut stream = derive_stream(309 + idx as u64, 0, 0, 0, Role::Aux);
            let (mut s1, mut s2) = (0.0, 0.0);
            for j in 0..chains {
                let state = GibbsState {
                    z: strata[j % strata.len()],
                    params: p,
                };
                let next = gibbs_step(&state, &mut stream);
                s1 += next.z;
                s2 += next.z * next.z;
            }
            let m1 = s1 / chains as f64;
            let m2 = s2 / chains as f64;
            let se1 = (var / chains as f64).sqrt();
            let se2 = (var_of_z2 / chains as f64).sqrt();
            assert!(
                (m1 - mean).abs() <= 5.0 * se1,
                "instance {idx}: mean {m1} vs {mean}"
            );
            assert!(
                (m2 - second).abs() <= 5.0 * se2,
                "instance {idx}: second moment {m2} vs {second}"
            );
        }
    }
}
