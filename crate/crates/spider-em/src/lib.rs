//! Perturbed prox-preconditioned SPIDER EM (3P-SPIDER) for finite-sum
//! latent-variable objectives whose per-example conditional expectations are
//! intractable, together with the baselines and verification oracles needed
//! to study it: a latent logistic-regression model with Pólya-Gamma Gibbs
//! statistics, perturbed Online-EM, exact EM, Gauss-Hermite quadrature
//! oracles, and a reproducible experiment harness.

pub mod algorithms;
pub mod config;
pub mod data;
pub mod em;
pub mod error;
pub mod harness;
pub mod logit;
pub mod numerics;
pub mod oracle;

pub use algorithms::{
    inner_step, outer_boundary_step, refresh_control_variate, run_3p_spider, run_exact_em,
    run_online_em, sample_minibatch, OnlineEmConfig, RunTrace, SamplingMode, Schedule,
    SpiderConfig,
};
pub use em::{
    stationarity_metric, validate_model, IterateState, LatentModel, NoProx, OracleStats,
    ParamVector, Preconditioner, StatVector, ValidationReport,
};
pub use error::{Error, Result};
pub use logit::{Dataset, LogitModel, SamplerKind};
