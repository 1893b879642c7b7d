//! Statistics-space abstractions: the vectors the algorithms move through,
//! the contract a latent-variable model implements, iterate state, model
//! validation and the stationarity diagnostic.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::numerics::linalg::{cholesky, reconstruction_error, symmetry_error};
use crate::numerics::rng::RngStream;

/// A point in the statistics space (the space EM is iterated in).
#[derive(Debug, Clone, PartialEq)]
pub struct StatVector(Array1<f64>);

/// A point in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Array1<f64>);

macro_rules! vector_impl {
    ($name:ident, $what:expr) => {
        impl $name {
            pub fn new(entries: Array1<f64>) -> Result<Self> {
                if entries.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite($what));
                }
                Ok(Self(entries))
            }

            pub fn from_vec(entries: Vec<f64>) -> Result<Self> {
                Self::new(Array1::from(entries))
            }

            pub fn zeros(len: usize) -> Self {
                Self(Array1::zeros(len))
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_array(&self) -> &Array1<f64> {
                &self.0
            }

            pub fn into_array(self) -> Array1<f64> {
                self.0
            }

            pub fn as_slice(&self) -> &[f64] {
                self.0.as_slice().expect("contiguous vector")
            }

            /// `self + alpha * other`
            pub fn add_scaled(&self, other: &Self, alpha: f64) -> Self {
                Self(&self.0 + &(&other.0 * alpha))
            }

            pub fn sub(&self, other: &Self) -> Self {
                Self(&self.0 - &other.0)
            }

            pub fn scaled(&self, alpha: f64) -> Self {
                Self(&self.0 * alpha)
            }

            pub fn norm(&self) -> f64 {
                self.0.dot(&self.0).sqrt()
            }

            pub fn sq_dist(&self, other: &Self) -> f64 {
                let d = &self.0 - &other.0;
                d.dot(&d)
            }

            pub fn check_len(&self, expected: usize, what: &'static str, index: usize) -> Result<()> {
                if self.len() != expected {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected,
                        got: self.len(),
                        index,
                    });
                }
                Ok(())
            }
        }

        impl From<$name> for Vec<f64> {
            fn from(v: $name) -> Vec<f64> {
                v.0.to_vec()
            }
        }
    };
}

vector_impl!(StatVector, "statistic vector");
vector_impl!(ParamVector, "parameter vector");

/// Positive-definite weighting matrix together with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    matrix: Array2<f64>,
    cholesky_factor: Array2<f64>,
}

impl Preconditioner {
    /// Validating constructor: checks symmetry (relative 1e-12), positive
    /// definiteness, and the factorization residual (relative 1e-10).
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        let sym = symmetry_error(&matrix);
        if sym > 1e-12 {
            return Err(Error::ValidationFailed(format!(
                "preconditioner asymmetry {sym:.3e} exceeds 1e-12"
            )));
        }
        let l = cholesky(&matrix)?;
        let resid = reconstruction_error(&l, &matrix);
        if resid > 1e-10 {
            return Err(Error::ValidationFailed(format!(
                "cholesky reconstruction error {resid:.3e} exceeds 1e-10"
            )));
        }
        Ok(Self {
            matrix,
            cholesky_factor: l,
        })
    }

    /// Wrap a matrix without checking the invariants. Used by validation
    /// tooling and deliberately defective test models.
    pub fn new_unchecked(matrix: Array2<f64>, cholesky_factor: Array2<f64>) -> Self {
        Self {
            matrix,
            cholesky_factor,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn cholesky_factor(&self) -> &Array2<f64> {
        &self.cholesky_factor
    }

    /// `vᵀ B v`
    pub fn quadratic_form(&self, v: &Array1<f64>) -> f64 {
        v.dot(&self.matrix.dot(v))
    }
}

/// State carried between 3P-SPIDER steps: the iterate and the control
/// variate tracking the mean statistic, tagged with its loop coordinates.
#[derive(Debug, Clone)]
pub struct IterateState {
    /// Current iterate Ŝ.
    pub s_hat: StatVector,
    /// Control variate 𝖲.
    pub s_cv: StatVector,
    /// Outer loop index (1-based).
    pub t: usize,
    /// Inner index; -1 denotes the pre-refresh anchor of an outer loop.
    pub k: i64,
}

/// Contract a latent-variable model implements for the algorithms in this
/// crate. Implementations must be immutable after construction and safe for
/// concurrent read-only use.
pub trait LatentModel: Sync {
    /// Number of examples in the finite sum.
    fn n_examples(&self) -> usize;
    /// Dimension q of the statistic space.
    fn stat_dim(&self) -> usize;
    /// Dimension d of the parameter space.
    fn param_dim(&self) -> usize;

    /// Stochastic approximation of the per-example conditional statistic at
    /// the mapped parameter, using `budget` Monte Carlo draws. Deterministic
    /// given the stream.
    fn approx_stat(&self, i: usize, s: &StatVector, budget: usize, stream: RngStream)
        -> StatVector;

    /// Exact per-example conditional statistic, when the model can provide
    /// one. Models without an oracle return `Error::OracleUnavailable`.
    fn exact_stat(&self, i: usize, s: &StatVector) -> Result<StatVector>;

    /// M-step map: the unique minimizer θ of the penalized linear form at s.
    fn t_map(&self, s: &StatVector) -> ParamVector;

    /// Preconditioner B(s).
    fn preconditioner_at(&self, s: &StatVector) -> Preconditioner;

    /// Weighted proximal operator of the model's nonsmooth term g: the
    /// minimizer of `γ g(u) + ½ (u - s')ᵀ B (u - s')`.
    fn weighted_prox(&self, b: &Preconditioner, gamma: f64, s_prime: &StatVector) -> StatVector;

    /// Objective value, when computable. Models without a computable
    /// objective return `Error::OracleUnavailable`.
    fn objective(&self, theta: &ParamVector) -> Result<f64>;

    /// Whether `g(s) < ∞` (for indicator-type g, membership in the
    /// constraint set).
    fn is_feasible(&self, s: &StatVector) -> bool;
}

impl<M: LatentModel + ?Sized> LatentModel for &M {
    fn n_examples(&self) -> usize {
        (**self).n_examples()
    }
    fn stat_dim(&self) -> usize {
        (**self).stat_dim()
    }
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn approx_stat(&self, i: usize, s: &StatVector, budget: usize, stream: RngStream) -> StatVector {
        (**self).approx_stat(i, s, budget, stream)
    }
    fn exact_stat(&self, i: usize, s: &StatVector) -> Result<StatVector> {
        (**self).exact_stat(i, s)
    }
    fn t_map(&self, s: &StatVector) -> ParamVector {
        (**self).t_map(s)
    }
    fn preconditioner_at(&self, s: &StatVector) -> Preconditioner {
        (**self).preconditioner_at(s)
    }
    fn weighted_prox(&self, b: &Preconditioner, gamma: f64, s_prime: &StatVector) -> StatVector {
        (**self).weighted_prox(b, gamma, s_prime)
    }
    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        (**self).objective(theta)
    }
    fn is_feasible(&self, s: &StatVector) -> bool {
        (**self).is_feasible(s)
    }
}

/// Adapter wiring the exact-statistic oracle in place of the Monte Carlo
/// approximation; budget and stream are ignored.
pub struct OracleStats<M>(pub M);

impl<M: LatentModel> LatentModel for OracleStats<M> {
    fn n_examples(&self) -> usize {
        self.0.n_examples()
    }
    fn stat_dim(&self) -> usize {
        self.0.stat_dim()
    }
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }
    fn approx_stat(
        &self,
        i: usize,
        s: &StatVector,
        _budget: usize,
        _stream: RngStream,
    ) -> StatVector {
        self.0
            .exact_stat(i, s)
            .expect("OracleStats requires a model with an exact-statistic oracle")
    }
    fn exact_stat(&self, i: usize, s: &StatVector) -> Result<StatVector> {
        self.0.exact_stat(i, s)
    }
    fn t_map(&self, s: &StatVector) -> ParamVector {
        self.0.t_map(s)
    }
    fn preconditioner_at(&self, s: &StatVector) -> Preconditioner {
        self.0.preconditioner_at(s)
    }
    fn weighted_prox(&self, b: &Preconditioner, gamma: f64, s_prime: &StatVector) -> StatVector {
        self.0.weighted_prox(b, gamma, s_prime)
    }
    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        self.0.objective(theta)
    }
    fn is_feasible(&self, s: &StatVector) -> bool {
        self.0.is_feasible(s)
    }
}

/// Adapter replacing the proximal step with the identity (g ≡ 0); every
/// point is feasible.
pub struct NoProx<M>(pub M);

impl<M: LatentModel> LatentModel for NoProx<M> {
    fn n_examples(&self) -> usize {
        self.0.n_examples()
    }
    fn stat_dim(&self) -> usize {
        self.0.stat_dim()
    }
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }
    fn approx_stat(&self, i: usize, s: &StatVector, budget: usize, stream: RngStream) -> StatVector {
        self.0.approx_stat(i, s, budget, stream)
    }
    fn exact_stat(&self, i: usize, s: &StatVector) -> Result<StatVector> {
        self.0.exact_stat(i, s)
    }
    fn t_map(&self, s: &StatVector) -> ParamVector {
        self.0.t_map(s)
    }
    fn preconditioner_at(&self, s: &StatVector) -> Preconditioner {
        self.0.preconditioner_at(s)
    }
    fn weighted_prox(&self, _b: &Preconditioner, _gamma: f64, s_prime: &StatVector) -> StatVector {
        s_prime.clone()
    }
    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        self.0.objective(theta)
    }
    fn is_feasible(&self, _s: &StatVector) -> bool {
        true
    }
}

/// One run's contribution to the stationarity diagnostic:
/// `‖s_next - s_prev‖² / γ²`.
pub fn stationarity_metric(s_prev: &StatVector, s_next: &StatVector, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidStepSize(gamma));
    }
    s_next.check_len(s_prev.len(), "stationarity_metric", 0)?;
    Ok(s_prev.sq_dist(s_next) / (gamma * gamma))
}

/// Checks run for one probe point by [`validate_model`].
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub probe: usize,
    /// Relative asymmetry of B at the probe.
    pub b_symmetry: f64,
    /// Whether B admitted a Cholesky factorization.
    pub b_positive_definite: bool,
    /// Relative reconstruction error of the factor shipped with B.
    pub b_factor_residual: f64,
    /// ‖prox(prox(s')) - prox(s')‖ at the probe.
    pub prox_idempotence: f64,
    /// Largest |approx - exact| entry over the sampled examples, with the
    /// tolerance it was judged against; None when the model has no oracle.
    pub stat_agreement: Option<(f64, f64)>,
}

impl ProbeReport {
    pub fn ok(&self) -> bool {
        self.b_symmetry <= 1e-12
            && self.b_positive_definite
            && self.b_factor_residual <= 1e-10
            && self.prox_idempotence <= 1e-10
            && self.stat_agreement.map_or(true, |(err, tol)| err <= tol)
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub probes: Vec<ProbeReport>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.probes.iter().all(ProbeReport::ok)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for p in &self.probes {
            out.push_str(&format!(
                "probe {}: symmetry {:.2e}, pd {}, factor residual {:.2e}, prox idempotence {:.2e}",
                p.probe, p.b_symmetry, p.b_positive_definite, p.b_factor_residual, p.prox_idempotence
            ));
            if let Some((err, tol)) = p.stat_agreement {
                out.push_str(&format!(", stat agreement {err:.2e} (tol {tol:.2e})"));
            }
            out.push_str(if p.ok() { " [ok]\n" } else { " [FAIL]\n" });
        }
        out
    }
}

/// Monte Carlo budget used for the approx/exact agreement check.
const VALIDATION_BUDGET: usize = 20_000;

/// Run structural checks of a model at the given probe points: symmetry and
/// positive definiteness of B, idempotence of the prox, and agreement of the
/// stochastic statistic with the exact oracle where one exists.
pub fn validate_model<M: LatentModel>(
    model: &M,
    probes: &[StatVector],
    seed: u64,
) -> Result<ValidationReport> {
    if probes.is_empty() {
        return Err(Error::EmptyInput("probe points"));
    }
    let q = model.stat_dim();
    let mut reports = Vec::with_capacity(probes.len());
    for (idx, probe) in probes.iter().enumerate() {
        probe.check_len(q, "validation probe", idx)?;
        let b = model.preconditioner_at(probe);
        let b_symmetry = symmetry_error(b.matrix());
        let (b_positive_definite, b_factor_residual) = match cholesky(b.matrix()) {
            Ok(_) => (true, reconstruction_error(b.cholesky_factor(), b.matrix())),
            Err(_) => (false, f64::INFINITY),
        };

        let p1 = model.weighted_prox(&b, 0.7, probe);
        let p2 = model.weighted_prox(&b, 0.7, &p1);
        let prox_idempotence = p2.sub(&p1).norm();

        let n = model.n_examples();
        let sample: Vec<usize> = [0, n / 2, n.saturating_sub(1)]
            .into_iter()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let stat_agreement = match model.exact_stat(sample[0], probe) {
            Err(Error::OracleUnavailable(_)) => None,
            Err(e) => return Err(e),
            Ok(_) => {
                let mut worst = 0.0_f64;
                let mut tol = 0.0_f64;
                for (j, &i) in sample.iter().enumerate() {
                    let exact = model.exact_stat(i, probe)?;
                    let stream = crate::numerics::rng::derive_stream(
                        seed,
                        idx as u64,
                        j as i64,
                        i as u64,
                        crate::numerics::rng::Role::Aux,
                    );
                    let approx = model.approx_stat(i, probe, VALIDATION_BUDGET, stream);
                    let err = approx
                        .as_slice()
                        .iter()
                        .zip(exact.as_slice())
                        .map(|(a, e)| (a - e).abs())
                        .fold(0.0_f64, f64::max);
                    worst = worst.max(err);
                    // Scale-aware band: a quarter of the oracle magnitude
                    // plus a Monte Carlo allowance. Wrong wiring (sign,
                    // scaling, example mixup) lands far outside it.
                    tol = tol.max(0.25 * exact.norm() + 10.0 / (VALIDATION_BUDGET as f64).sqrt());
                }
                Some((worst, tol))
            }
        };

        reports.push(ProbeReport {
            probe: idx,
            b_symmetry,
            b_positive_definite,
            b_factor_residual,
            prox_idempotence,
            stat_agreement,
        });
    }
    Ok(ValidationReport { probes: reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stationarity_fixed_point_is_zero() {
        let s = StatVector::from_vec(vec![1.0, -2.0]).unwrap();
        assert_eq!(stationarity_metric(&s, &s, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn stationarity_hand_case() {
        let a = StatVector::from_vec(vec![0.0, 0.0]).unwrap();
        let b = StatVector::from_vec(vec![0.3, 0.4]).unwrap();
        let v = stationarity_metric(&a, &b, 0.5).unwrap();
        assert!((v - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn stationarity_rejects_bad_gamma() {
        let s = StatVector::zeros(2);
        assert!(matches!(
            stationarity_metric(&s, &s, 0.0),
            Err(Error::InvalidStepSize(_))
        ));
        assert!(stationarity_metric(&s, &s, -1.0).is_err());
    }

    #[test]
    fn vectors_reject_non_finite() {
        assert!(StatVector::from_vec(vec![0.0, f64::NAN]).is_err());
        assert!(ParamVector::from_vec(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn preconditioner_validates() {
        let ok = Preconditioner::new(ndarray::array![[4.0, 2.0], [2.0, 3.0]]).unwrap();
        assert_eq!(ok.dim(), 2);
        assert!(Preconditioner::new(ndarray::array![[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(Preconditioner::new(ndarray::array![[1.0, 0.5], [0.1, 1.0]]).is_err());
    }

    proptest! {
        /// The metric only sees the norm of the difference, so a simultaneous
        /// rotation of both arguments leaves it unchanged.
        #[test]
        fn stationarity_rotation_invariant(
            x0 in -10.0..10.0f64, x1 in -10.0..10.0f64,
            y0 in -10.0..10.0f64, y1 in -10.0..10.0f64,
            angle in 0.0..std::f64::consts::TAU,
            gamma in 1e-3..10.0f64,
        ) {
            let rot = |a: f64, b: f64| (a * angle.cos() - b * angle.sin(), a * angle.sin() + b * angle.cos());
            let p = StatVector::from_vec(vec![x0, x1]).unwrap();
            let q = StatVector::from_vec(vec![y0, y1]).unwrap();
            let (rx0, rx1) = rot(x0, x1);
            let (ry0, ry1) = rot(y0, y1);
            let pr = StatVector::from_vec(vec![rx0, rx1]).unwrap();
            let qr = StatVector::from_vec(vec![ry0, ry1]).unwrap();
            let a = stationarity_metric(&p, &q, gamma).unwrap();
            let b = stationarity_metric(&pr, &qr, gamma).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
