//! Supporting numerical kernels: dense SPD linear algebra, Gauss-Hermite
//! quadrature, the Pólya-Gamma Gibbs kernel and keyed deterministic
//! randomness.

pub mod gibbs;
pub mod linalg;
pub mod polya_gamma;
pub mod quadrature;
pub mod rng;

pub use gibbs::{gibbs_step, sample_posterior_iid, sigmoid, GibbsState, PosteriorParams};
pub use linalg::{cholesky, max_eigenvalue, min_eigenvalue_of_inverse, solve_spd};
pub use polya_gamma::{pg1_mean, sample_pg1, sample_pg1_truncated};
pub use quadrature::{gauss_hermite, QuadratureRule};
pub use rng::{derive_stream, RngStream, Role, StreamKey};
