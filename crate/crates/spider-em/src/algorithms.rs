//! The 3P-SPIDER loop, the perturbed Online-EM baseline and an exact-EM
//! reference, all written against the [`LatentModel`] contract.
//!
//! 3P-SPIDER runs `k_out` outer loops of `k_in` inner steps. The control
//! variate 𝖲 tracks the mean mapped statistic through telescoped minibatch
//! differences and is refreshed by a (possibly sub-sampled) full pass at
//! every outer boundary. Each inner step is a stochastic-approximation half
//! step followed by a weighted proximal step:
//!
//! ```text
//! 𝖲_{t,k+1} = 𝖲_{t,k} + b⁻¹ Σ_{i∈B} (ŝ_i at Ŝ_{t,k}  -  ŝ_i at Ŝ_{t,k-1})
//! Ŝ_{t,k+½} = Ŝ_{t,k} + γ_{t,k+1} (𝖲_{t,k+1} - Ŝ_{t,k})
//! Ŝ_{t,k+1} = Prox_{B(Ŝ_{t,k}), γ_{t,k+1} g}(Ŝ_{t,k+½})
//! ```
//!
//! Every stochastic call derives its stream from (seed, t, k, i, role), and
//! minibatch reductions run in ascending example order, so a run is
//! bit-identical regardless of how many workers execute it.

use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;

use crate::em::{IterateState, LatentModel, ParamVector, StatVector};
use crate::error::{Error, Result};
use crate::numerics::rng::{derive_stream, Role, RngStream};

/// Piecewise-constant schedule over outer-loop indices: `(start_t, value)`
/// pieces with ascending 1-based start indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T: Copy> {
    pieces: Vec<(usize, T)>,
}

impl<T: Copy> Schedule<T> {
    pub fn constant(value: T) -> Self {
        Schedule {
            pieces: vec![(1, value)],
        }
    }

    pub fn from_pieces(pieces: Vec<(usize, T)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::EmptyInput("schedule"));
        }
        if pieces[0].0 != 1 {
            return Err(Error::InvalidConfig(
                "schedule must start at outer index 1".into(),
            ));
        }
        if pieces.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig(
                "schedule breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Schedule { pieces })
    }

    /// Value in effect at outer index `t` (1-based).
    pub fn at(&self, t: usize) -> T {
        let mut value = self.pieces[0].1;
        for &(start, v) in &self.pieces {
            if start <= t {
                value = v;
            } else {
                break;
            }
        }
        value
    }

    pub fn pieces(&self) -> &[(usize, T)] {
        &self.pieces
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    WithoutReplacement,
    WithReplacement,
}

/// Hyperparameters of one 3P-SPIDER run.
#[derive(Debug, Clone)]
pub struct SpiderConfig {
    pub k_out: usize,
    pub k_in: usize,
    /// Minibatch size b.
    pub batch: usize,
    /// Step size γ_{t,k} for inner steps (k ≥ 1); must be positive.
    pub gamma_inner: Schedule<f64>,
    /// Boundary step size γ_{t,0}; zero keeps the refreshed anchor.
    pub gamma_boundary: Schedule<f64>,
    /// Monte Carlo budget m_{t,k} per statistic evaluation.
    pub mc_budget: Schedule<usize>,
    /// Monte Carlo budget m' per statistic inside a refresh.
    pub refresh_budget: usize,
    /// Fraction of examples used by a refresh; 1 is the full pass.
    pub refresh_fraction: f64,
    pub sampling: SamplingMode,
    /// Use a common stream for the two statistics of a telescoped pair.
    pub couple_stat_pairs: bool,
    pub seed: u64,
}

impl SpiderConfig {
    /// Paper-style defaults for a dataset of n examples.
    pub fn defaults(n: usize, seed: u64) -> Self {
        SpiderConfig {
            k_out: 20,
            k_in: default_k_in(n),
            batch: default_batch(n),
            gamma_inner: Schedule::constant(0.1),
            gamma_boundary: Schedule::constant(0.1),
            mc_budget: Schedule::constant(default_mc_budget(n)),
            refresh_budget: default_refresh_budget(n),
            refresh_fraction: 1.0,
            sampling: SamplingMode::WithoutReplacement,
            couple_stat_pairs: false,
            seed,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k_out == 0 || self.k_in == 0 {
            return Err(Error::InvalidConfig("k_out and k_in must be positive".into()));
        }
        if self.batch == 0 || self.batch > n {
            return Err(Error::InvalidConfig(format!(
                "batch size must lie in [1, {n}], got {}",
                self.batch
            )));
        }
        for t in 1..=self.k_out {
            if !(self.gamma_inner.at(t) > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "gamma_inner must be positive for every outer index (t={t} gives {})",
                    self.gamma_inner.at(t)
                )));
            }
            if self.gamma_boundary.at(t) < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "gamma_boundary must be nonnegative (t={t} gives {})",
                    self.gamma_boundary.at(t)
                )));
            }
            if self.mc_budget.at(t) == 0 {
                return Err(Error::InvalidConfig(format!(
                    "mc_budget must be at least 1 (t={t})"
                )));
            }
        }
        if self.refresh_budget == 0 {
            return Err(Error::InvalidConfig("refresh_budget must be at least 1".into()));
        }
        if !(self.refresh_fraction > 0.0 && self.refresh_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "refresh_fraction must lie in (0, 1], got {}",
                self.refresh_fraction
            )));
        }
        Ok(())
    }
}

/// `⌈√n / 10⌉`
pub fn default_k_in(n: usize) -> usize {
    ((n as f64).sqrt() / 10.0).ceil() as usize
}

/// `min(⌈10 √n⌉, n)`
pub fn default_batch(n: usize) -> usize {
    ((10.0 * (n as f64).sqrt()).ceil() as usize).min(n)
}

/// `2 ⌈√n⌉`
pub fn default_mc_budget(n: usize) -> usize {
    2 * (n as f64).sqrt().ceil() as usize
}

/// `10 ⌈√n⌉`
pub fn default_refresh_budget(n: usize) -> usize {
    10 * (n as f64).sqrt().ceil() as usize
}

/// One prox-producing step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Outer index (1-based); for Online-EM the step index.
    pub t: usize,
    /// Inner index of the diagnostic D_{t,k}; k = k_in labels the boundary
    /// move into the next outer loop.
    pub k: i64,
    /// Step size used by this move.
    pub gamma: f64,
    /// ‖move‖²/γ² (zero when γ = 0, where the move is identically zero).
    pub sq_move_over_gamma2: f64,
    /// Cumulative epochs (per-example statistic evaluations / n) consumed.
    pub epochs: f64,
    pub wall_ms: f64,
}

/// Iterate snapshot persisted with a trace.
#[derive(Debug, Clone)]
pub struct IterateDump {
    pub t: usize,
    pub k: i64,
    pub s: StatVector,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<StepRecord>,
    pub dumps: Vec<IterateDump>,
    pub final_state: IterateState,
}

impl RunTrace {
    pub fn total_epochs(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.epochs)
    }
}

/// Draw a minibatch of size b from `{0, …, n-1}`, deterministically from the
/// given stream.
pub fn sample_minibatch(
    n: usize,
    b: usize,
    mode: SamplingMode,
    stream: &mut RngStream,
) -> Result<Vec<usize>> {
    if b == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    match mode {
        SamplingMode::WithoutReplacement => {
            if b > n {
                return Err(Error::InvalidConfig(format!(
                    "cannot draw {b} of {n} examples without replacement"
                )));
            }
            let mut pool: Vec<usize> = (0..n).collect();
            for j in 0..b {
                let r = j + uniform_index(stream, n - j);
                pool.swap(j, r);
            }
            pool.truncate(b);
            Ok(pool)
        }
        SamplingMode::WithReplacement => {
            Ok((0..b).map(|_| uniform_index(stream, n)).collect())
        }
    }
}

/// Unbiased integer in `[0, n)` (Lemire widening-multiply rejection).
fn uniform_index(stream: &mut RngStream, n: usize) -> usize {
    use rand::RngCore;
    debug_assert!(n > 0);
    let n = n as u64;
    let threshold = n.wrapping_neg() % n;
    loop {
        let x = stream.next_u64();
        let m = (x as u128) * (n as u128);
        if (m as u64) >= threshold {
            return (m >> 64) as usize;
        }
    }
}

/// Evaluate the b⁻¹-scaled minibatch sums of the telescoped statistic pair
/// (current anchor, previous anchor). Evaluations run in parallel; the
/// reduction is sequential in ascending example order.
fn minibatch_pair_sums<M: LatentModel>(
    model: &M,
    batch: &[usize],
    s_cur: &StatVector,
    s_prev: &StatVector,
    budget: usize,
    seed: u64,
    t: usize,
    k: i64,
    couple: bool,
) -> (StatVector, StatVector) {
    let mut sorted = batch.to_vec();
    sorted.sort_unstable();
    let pairs: Vec<(StatVector, StatVector)> = sorted
        .par_iter()
        .map(|&i| {
            let cur = derive_stream(seed, t as u64, k, i as u64, Role::StatCurrent);
            let prev = if couple {
                cur.clone()
            } else {
                derive_stream(seed, t as u64, k, i as u64, Role::StatPrev)
            };
            (
                model.approx_stat(i, s_cur, budget, cur),
                model.approx_stat(i, s_prev, budget, prev),
            )
        })
        .collect();
    let q = model.stat_dim();
    let scale = 1.0 / batch.len() as f64;
    let mut sum_new = Array1::<f64>::zeros(q);
    let mut sum_old = Array1::<f64>::zeros(q);
    for (a, b) in &pairs {
        sum_new += a.as_array();
        sum_old += b.as_array();
    }
    (
        StatVector::new(sum_new * scale).expect("finite minibatch sum"),
        StatVector::new(sum_old * scale).expect("finite minibatch sum"),
    )
}

/// Initialize the control variate for outer loop `t`: the mean approximate
/// statistic at the anchor over a uniformly drawn subset of `⌈f·n⌉`
/// examples (the full data set when f = 1).
pub fn refresh_control_variate<M: LatentModel>(
    model: &M,
    s_anchor: &StatVector,
    cfg: &SpiderConfig,
    t: usize,
) -> Result<StatVector> {
    let n = model.n_examples();
    let size = refresh_size(n, cfg.refresh_fraction)?;
    let subset: Vec<usize> = if size >= n {
        (0..n).collect()
    } else {
        let mut stream = derive_stream(cfg.seed, t as u64, -1, 0, Role::RefreshSubset);
        let mut s = sample_minibatch(n, size, SamplingMode::WithoutReplacement, &mut stream)?;
        s.sort_unstable();
        s
    };
    let stats: Vec<StatVector> = subset
        .par_iter()
        .map(|&i| {
            let stream = derive_stream(cfg.seed, t as u64, -1, i as u64, Role::Refresh);
            model.approx_stat(i, s_anchor, cfg.refresh_budget, stream)
        })
        .collect();
    let mut acc = Array1::<f64>::zeros(model.stat_dim());
    for s in &stats {
        acc += s.as_array();
    }
    StatVector::new(acc / size as f64)
}

/// Number of examples a refresh touches: `⌈f·n⌉` with snapping of
/// floating-point noise at integer boundaries.
pub fn refresh_size(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "refresh_fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let x = fraction * n as f64;
    let rounded = x.round();
    let size = if (x - rounded).abs() < 1e-9 * n.max(1) as f64 {
        rounded as usize
    } else {
        x.ceil() as usize
    };
    Ok(size.clamp(1, n))
}

/// One inner step (control-variate update, half step, prox) given the
/// b⁻¹-scaled minibatch sums of the telescoped pair. Equivalently a
/// stochastic-approximation step with drift `H = sum_new + V − Ŝ` and
/// control variate `V = 𝖲 − sum_old`.
pub fn inner_step<M: LatentModel>(
    model: &M,
    state: &IterateState,
    sum_new: &StatVector,
    sum_old: &StatVector,
    gamma: f64,
) -> Result<IterateState> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidStepSize(gamma));
    }
    let q = model.stat_dim();
    state.s_hat.check_len(q, "inner_step iterate", 0)?;
    sum_new.check_len(q, "inner_step sum_new", 0)?;
    sum_old.check_len(q, "inner_step sum_old", 0)?;
    let s_cv = state.s_cv.add_scaled(&sum_new.sub(sum_old), 1.0);
    let half = state.s_hat.add_scaled(&s_cv.sub(&state.s_hat), gamma);
    let b = model.preconditioner_at(&state.s_hat);
    let s_hat = model.weighted_prox(&b, gamma, &half);
    if s_hat.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inner step iterate"));
    }
    Ok(IterateState {
        s_hat,
        s_cv,
        t: state.t,
        k: state.k + 1,
    })
}

/// Boundary step into the next outer loop: half step from the anchor toward
/// the fresh control variate with γ_{t,0} ≥ 0, then the prox evaluated at
/// the anchor's preconditioner. γ = 0 keeps a feasible anchor fixed.
pub fn outer_boundary_step<M: LatentModel>(
    model: &M,
    state: &IterateState,
    gamma0: f64,
) -> Result<IterateState> {
    if gamma0 < 0.0 {
        return Err(Error::InvalidStepSize(gamma0));
    }
    let half = state.s_hat.add_scaled(&state.s_cv.sub(&state.s_hat), gamma0);
    let b = model.preconditioner_at(&state.s_hat);
    let s_hat = model.weighted_prox(&b, gamma0, &half);
    if s_hat.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("boundary step iterate"));
    }
    Ok(IterateState {
        s_hat,
        s_cv: state.s_cv.clone(),
        t: state.t + 1,
        k: 0,
    })
}

/// Run 3P-SPIDER. The returned trace holds one record per prox-producing
/// step — rows (t, k) for the inner moves and (t, k_in) for the boundary
/// moves — plus iterate dumps at the end of every outer loop.
pub fn run_3p_spider<M: LatentModel>(
    model: &M,
    cfg: &SpiderConfig,
    init: &StatVector,
) -> Result<RunTrace> {
    let n = model.n_examples();
    cfg.validate(n)?;
    init.check_len(model.stat_dim(), "initial statistic", 0)?;

    // Project an infeasible start (the prox of an indicator is a projection).
    let mut s_hat = if model.is_feasible(init) {
        init.clone()
    } else {
        let b = model.preconditioner_at(init);
        model.weighted_prox(&b, 1.0, init)
    };
    if !model.is_feasible(&s_hat) {
        return Err(Error::ValidationFailed(
            "initial statistic could not be projected to feasibility".into(),
        ));
    }

    let started = Instant::now();
    let mut records = Vec::new();
    let mut dumps = Vec::new();
    let mut epochs = 0.0_f64;
    let refresh_epochs = refresh_size(n, cfg.refresh_fraction)? as f64 / n as f64;

    // Ŝ_{1,0} = Ŝ_{1,-1} = init; 𝖲_{1,0} from a refresh at the anchor.
    let mut s_prev = s_hat.clone();
    let mut s_cv = refresh_control_variate(model, &s_hat, cfg, 1)?;
    epochs += refresh_epochs;

    for t in 1..=cfg.k_out {
        let gamma = cfg.gamma_inner.at(t);
        let budget = cfg.mc_budget.at(t);
        for k in 0..cfg.k_in {
            let mut batch_stream =
                derive_stream(cfg.seed, t as u64, k as i64, 0, Role::Batch);
            let batch = sample_minibatch(n, cfg.batch, cfg.sampling, &mut batch_stream)?;
            let (sum_new, sum_old) = minibatch_pair_sums(
                model,
                &batch,
                &s_hat,
                &s_prev,
                budget,
                cfg.seed,
                t,
                k as i64,
                cfg.couple_stat_pairs,
            );
            let state = IterateState {
                s_hat: s_hat.clone(),
                s_cv: s_cv.clone(),
                t,
                k: k as i64,
            };
            let next = inner_step(model, &state, &sum_new, &sum_old, gamma)?;
            epochs += cfg.batch as f64 / n as f64;
            records.push(StepRecord {
                t,
                k: k as i64,
                gamma,
                sq_move_over_gamma2: s_hat.sq_dist(&next.s_hat) / (gamma * gamma),
                epochs,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            s_prev = s_hat;
            s_hat = next.s_hat;
            s_cv = next.s_cv;
        }

        // Ŝ_{t,k_in} is the anchor Ŝ_{t+1,-1} of the next loop.
        dumps.push(IterateDump {
            t,
            k: cfg.k_in as i64,
            s: s_hat.clone(),
        });

        if t < cfg.k_out {
            s_cv = refresh_control_variate(model, &s_hat, cfg, t + 1)?;
            epochs += refresh_epochs;
            let gamma0 = cfg.gamma_boundary.at(t + 1);
            let state = IterateState {
                s_hat: s_hat.clone(),
                s_cv: s_cv.clone(),
                t,
                k: cfg.k_in as i64,
            };
            let next = outer_boundary_step(model, &state, gamma0)?;
            let sq = if gamma0 > 0.0 {
                s_hat.sq_dist(&next.s_hat) / (gamma0 * gamma0)
            } else {
                0.0
            };
            records.push(StepRecord {
                t,
                k: cfg.k_in as i64,
                gamma: gamma0,
                sq_move_over_gamma2: sq,
                epochs,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            s_prev = s_hat;
            s_hat = next.s_hat;
        }
    }

    Ok(RunTrace {
        records,
        dumps,
        final_state: IterateState {
            s_hat,
            s_cv,
            t: cfg.k_out,
            k: cfg.k_in as i64,
        },
    })
}

/// Hyperparameters of an Online-EM run.
#[derive(Debug, Clone)]
pub struct OnlineEmConfig {
    pub steps: usize,
    pub batch: usize,
    pub gamma: Schedule<f64>,
    pub mc_budget: Schedule<usize>,
    pub sampling: SamplingMode,
    pub seed: u64,
}

impl OnlineEmConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        if self.batch == 0 || self.batch > n {
            return Err(Error::InvalidConfig(format!(
                "batch size must lie in [1, {n}], got {}",
                self.batch
            )));
        }
        for t in 1..=self.steps {
            if !(self.gamma.at(t) > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "gamma must be positive (step {t})"
                )));
            }
            if self.mc_budget.at(t) == 0 {
                return Err(Error::InvalidConfig(format!(
                    "mc_budget must be at least 1 (step {t})"
                )));
            }
        }
        Ok(())
    }
}

/// Perturbed Online-EM: one stochastic half step toward the minibatch mean
/// statistic per iteration, followed by the same weighted prox as 3P-SPIDER.
/// Rows are (t, 0); iterate dumps are written once per epoch.
pub fn run_online_em<M: LatentModel>(
    model: &M,
    cfg: &OnlineEmConfig,
    init: &StatVector,
) -> Result<RunTrace> {
    let n = model.n_examples();
    cfg.validate(n)?;
    init.check_len(model.stat_dim(), "initial statistic", 0)?;
    let mut s_hat = if model.is_feasible(init) {
        init.clone()
    } else {
        let b = model.preconditioner_at(init);
        model.weighted_prox(&b, 1.0, init)
    };

    let started = Instant::now();
    let mut records = Vec::new();
    let mut dumps = Vec::new();
    let mut epochs = 0.0_f64;
    let mut next_dump_epoch = 1.0_f64;

    for t in 1..=cfg.steps {
        let gamma = cfg.gamma.at(t);
        let budget = cfg.mc_budget.at(t);
        let mut batch_stream = derive_stream(cfg.seed, t as u64, 0, 0, Role::Batch);
        let batch = sample_minibatch(n, cfg.batch, cfg.sampling, &mut batch_stream)?;
        let mut sorted = batch;
        sorted.sort_unstable();
        let stats: Vec<StatVector> = sorted
            .par_iter()
            .map(|&i| {
                let stream = derive_stream(cfg.seed, t as u64, 0, i as u64, Role::StatCurrent);
                model.approx_stat(i, &s_hat, budget, stream)
            })
            .collect();
        let mut acc = Array1::<f64>::zeros(model.stat_dim());
        for s in &stats {
            acc += s.as_array();
        }
        let mean = StatVector::new(acc / sorted.len() as f64)?;
        let half = s_hat.add_scaled(&mean.sub(&s_hat), gamma);
        let b = model.preconditioner_at(&s_hat);
        let next = model.weighted_prox(&b, gamma, &half);
        if next.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("online-em iterate"));
        }
        epochs += cfg.batch as f64 / n as f64;
        records.push(StepRecord {
            t,
            k: 0,
            gamma,
            sq_move_over_gamma2: s_hat.sq_dist(&next) / (gamma * gamma),
            epochs,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        s_hat = next;
        if epochs >= next_dump_epoch || t == cfg.steps {
            dumps.push(IterateDump {
                t,
                k: 1,
                s: s_hat.clone(),
            });
            next_dump_epoch = epochs.floor() + 1.0;
        }
    }

    let s_cv = s_hat.clone();
    Ok(RunTrace {
        records,
        dumps,
        final_state: IterateState {
            s_hat,
            s_cv,
            t: cfg.steps,
            k: 0,
        },
    })
}

/// Exact-EM trace in the statistic space: s ← mean of the exact per-example
/// statistics, with θ_k = T(s_k) and the objective value alongside.
#[derive(Debug, Clone)]
pub struct ExactEmTrace {
    pub stats: Vec<StatVector>,
    pub params: Vec<ParamVector>,
    pub objectives: Vec<f64>,
}

/// Run exact EM from `s_init` for `iters` iterations. Requires the model's
/// exact-statistic oracle and objective.
pub fn run_exact_em<M: LatentModel>(
    model: &M,
    iters: usize,
    s_init: &StatVector,
) -> Result<ExactEmTrace> {
    s_init.check_len(model.stat_dim(), "initial statistic", 0)?;
    let n = model.n_examples();
    let mut stats = vec![s_init.clone()];
    let mut params = vec![model.t_map(s_init)];
    let mut objectives = vec![model.objective(&params[0])?];
    let mut s = s_init.clone();
    for _ in 0..iters {
        let mut acc = Array1::<f64>::zeros(model.stat_dim());
        for i in 0..n {
            acc += model.exact_stat(i, &s)?.as_array();
        }
        s = StatVector::new(acc / n as f64)?;
        let theta = model.t_map(&s);
        objectives.push(model.objective(&theta)?);
        stats.push(s.clone());
        params.push(theta);
    }
    Ok(ExactEmTrace {
        stats,
        params,
        objectives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{NoProx, OracleStats, Preconditioner};
    use crate::logit::LogitModel;

    fn toy_model(n: usize, d: usize, seed: u64) -> LogitModel {
        let data = crate::data::generate_synthetic(n, d, 0.5, &vec![0.2; d], seed).unwrap();
        LogitModel::build(data, 0.5, 1.0, 64).unwrap()
    }

    #[test]
    fn paper_size_formulas() {
        let n = 24_989;
        assert_eq!(default_k_in(n), 16);
        assert_eq!(default_batch(n), 1581);
        assert_eq!(default_mc_budget(n), 318);
        assert_eq!(default_refresh_budget(n), 1590);
    }

    #[test]
    fn schedule_lookup() {
        let s = Schedule::from_pieces(vec![(1, 0.1), (4, 1e-3)]).unwrap();
        assert_eq!(s.at(1), 0.1);
        assert_eq!(s.at(3), 0.1);
        assert_eq!(s.at(4), 1e-3);
        assert_eq!(s.at(20), 1e-3);
        assert!(Schedule::from_pieces(vec![(2, 0.1)]).is_err());
        assert!(Schedule::from_pieces(vec![(1, 0.1), (1, 0.2)]).is_err());
    }

    #[test]
    fn config_rejects_zero_gamma() {
        let model = toy_model(10, 2, 1);
        let mut cfg = SpiderConfig::defaults(10, 7);
        cfg.k_out = 1;
        cfg.k_in = 1;
        cfg.gamma_inner = Schedule::constant(0.0);
        let err = run_3p_spider(&model, &cfg, &StatVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn config_rejects_zero_budget() {
        let mut cfg = SpiderConfig::defaults(10, 7);
        cfg.mc_budget = Schedule::constant(0);
        assert!(cfg.validate(10).is_err());
    }

    #[test]
    fn minibatch_full_is_permutation() {
        let mut stream = derive_stream(3, 1, 0, 0, Role::Batch);
        let mut batch = sample_minibatch(12, 12, SamplingMode::WithoutReplacement, &mut stream)
            .unwrap();
        batch.sort_unstable();
        assert_eq!(batch, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn minibatch_deterministic() {
        let mut a = derive_stream(5, 2, 3, 0, Role::Batch);
        let mut b = derive_stream(5, 2, 3, 0, Role::Batch);
        let x = sample_minibatch(100, 7, SamplingMode::WithoutReplacement, &mut a).unwrap();
        let y = sample_minibatch(100, 7, SamplingMode::WithoutReplacement, &mut b).unwrap();
        assert_eq!(x, y);
        let x = sample_minibatch(100, 7, SamplingMode::WithReplacement, &mut a).unwrap();
        let y = sample_minibatch(100, 7, SamplingMode::WithReplacement, &mut b).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn minibatch_rejects_oversize() {
        let mut stream = derive_stream(5, 2, 3, 0, Role::Batch);
        assert!(
            sample_minibatch(5, 6, SamplingMode::WithoutReplacement, &mut stream).is_err()
        );
        assert!(sample_minibatch(5, 0, SamplingMode::WithReplacement, &mut stream).is_err());
    }

    #[test]
    fn refresh_sizes() {
        assert_eq!(refresh_size(24_989, 1.0).unwrap(), 24_989);
        assert_eq!(refresh_size(24_989, 0.5).unwrap(), 12_495);
        assert_eq!(refresh_size(24_989, 0.25).unwrap(), 6_248);
        assert_eq!(refresh_size(2000, 0.1).unwrap(), 200);
        assert!(refresh_size(100, 1.5).is_err());
        assert!(refresh_size(100, 0.0).is_err());
    }

    #[test]
    fn refresh_full_with_oracle_is_exact_mean() {
        let model = OracleStats(toy_model(15, 2, 3));
        let cfg = SpiderConfig::defaults(15, 11);
        let anchor = StatVector::zeros(2);
        let refreshed = refresh_control_variate(&model, &anchor, &cfg, 1).unwrap();
        let mut acc = Array1::<f64>::zeros(2);
        for i in 0..15 {
            acc += model.exact_stat(i, &anchor).unwrap().as_array();
        }
        let expected = StatVector::new(acc / 15.0).unwrap();
        assert!(refreshed.sub(&expected).norm() <= 1e-15);
    }

    /// Scalar mock with identity prox for the hand-computed inner step.
    struct ScalarModel;

    impl LatentModel for ScalarModel {
        fn n_examples(&self) -> usize {
            1
        }
        fn stat_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn approx_stat(&self, _: usize, s: &StatVector, _: usize, _: RngStream) -> StatVector {
            s.clone()
        }
        fn exact_stat(&self, _: usize, s: &StatVector) -> Result<StatVector> {
            Ok(s.clone())
        }
        fn t_map(&self, s: &StatVector) -> ParamVector {
            ParamVector::from_vec(vec![s.as_slice()[0]]).unwrap()
        }
        fn preconditioner_at(&self, _: &StatVector) -> Preconditioner {
            Preconditioner::new(ndarray::Array2::eye(1)).unwrap()
        }
        fn weighted_prox(&self, _: &Preconditioner, _: f64, s: &StatVector) -> StatVector {
            s.clone()
        }
        fn objective(&self, _: &ParamVector) -> Result<f64> {
            Err(Error::OracleUnavailable("objective"))
        }
        fn is_feasible(&self, _: &StatVector) -> bool {
            true
        }
    }

    #[test]
    fn inner_step_hand_case() {
        // Ŝ = 1, 𝖲 = 2, sums differ by 0.5, γ = 0.1 with identity prox:
        // 𝖲' = 2.5, Ŝ' = 1 + 0.1·(2.5 - 1) = 1.15.
        let state = IterateState {
            s_hat: StatVector::from_vec(vec![1.0]).unwrap(),
            s_cv: StatVector::from_vec(vec![2.0]).unwrap(),
            t: 1,
            k: 0,
        };
        let sum_new = StatVector::from_vec(vec![0.9]).unwrap();
        let sum_old = StatVector::from_vec(vec![0.4]).unwrap();
        let next = inner_step(&ScalarModel, &state, &sum_new, &sum_old, 0.1).unwrap();
        assert!((next.s_cv.as_slice()[0] - 2.5).abs() <= 1e-15);
        assert!((next.s_hat.as_slice()[0] - 1.15).abs() <= 1e-15);
        assert_eq!(next.k, 1);

        // Equal sums leave the control variate unchanged.
        let same = inner_step(&ScalarModel, &state, &sum_new, &sum_new, 0.1).unwrap();
        assert_eq!(same.s_cv.as_slice()[0], 2.0);
        assert!((same.s_hat.as_slice()[0] - 1.1).abs() <= 1e-15);
    }

    #[test]
    fn inner_step_gamma_one_lands_on_control_variate() {
        let model = NoProx(toy_model(8, 2, 9));
        let state = IterateState {
            s_hat: StatVector::from_vec(vec![0.3, -0.2]).unwrap(),
            s_cv: StatVector::from_vec(vec![0.1, 0.4]).unwrap(),
            t: 1,
            k: 0,
        };
        let zero = StatVector::zeros(2);
        let next = inner_step(&model, &state, &zero, &zero, 1.0).unwrap();
        assert!(next.s_hat.sub(&state.s_cv).norm() <= 1e-15);
    }

    #[test]
    fn boundary_step_zero_gamma_keeps_anchor() {
        let model = toy_model(8, 2, 13);
        let anchor = model.weighted_prox(
            &model.preconditioner_at(&StatVector::zeros(2)),
            1.0,
            &StatVector::from_vec(vec![5.0, 5.0]).unwrap(),
        );
        let state = IterateState {
            s_hat: anchor.clone(),
            s_cv: StatVector::from_vec(vec![9.0, -9.0]).unwrap(),
            t: 1,
            k: 1,
        };
        let next = outer_boundary_step(&model, &state, 0.0).unwrap();
        assert_eq!(next.s_hat, anchor);
        assert!(outer_boundary_step(&model, &state, -0.1).is_err());
    }

    #[test]
    fn boundary_step_projects_infeasible_anchor() {
        // With γ0 = 0 the half step keeps the anchor; an infeasible anchor
        // must still come out projected.
        let model = toy_model(8, 2, 13);
        let infeasible = StatVector::from_vec(vec![50.0, 50.0]).unwrap();
        assert!(!model.is_feasible(&infeasible));
        let state = IterateState {
            s_hat: infeasible,
            s_cv: StatVector::zeros(2),
            t: 1,
            k: 1,
        };
        let next = outer_boundary_step(&model, &state, 0.0).unwrap();
        assert!(model.is_feasible(&next.s_hat));
    }

    #[test]
    fn exact_em_zero_iters_and_fixed_point() {
        let model = toy_model(12, 2, 17);
        let s0 = StatVector::from_vec(vec![0.1, 0.2]).unwrap();
        let trace = run_exact_em(&model, 0, &s0).unwrap();
        assert_eq!(trace.stats.len(), 1);
        assert_eq!(trace.stats[0], s0);

        // Iterate to convergence, then confirm the limit is a fixed point.
        let long = run_exact_em(&model, 300, &s0).unwrap();
        let s_star = long.stats.last().unwrap().clone();
        let once = run_exact_em(&model, 1, &s_star).unwrap();
        assert!(once.stats[1].sub(&s_star).norm() <= 1e-10);
    }

    #[test]
    fn spider_epoch_accounting() {
        // k_in·b = n makes one outer loop exactly two epochs (inner pass
        // plus refresh).
        let model = OracleStats(toy_model(20, 2, 19));
        let mut cfg = SpiderConfig::defaults(20, 23);
        cfg.k_out = 3;
        cfg.k_in = 4;
        cfg.batch = 5;
        cfg.mc_budget = Schedule::constant(1);
        cfg.refresh_budget = 1;
        let trace = run_3p_spider(&model, &cfg, &StatVector::zeros(2)).unwrap();
        let expected = cfg.k_out as f64 * (cfg.k_in as f64 * cfg.batch as f64 + 20.0) / 20.0;
        assert!((trace.total_epochs() - expected).abs() <= 1e-12);
        // Row grid: k_in inner rows per outer loop, a boundary row for all
        // but the last outer loop.
        assert_eq!(
            trace.records.len(),
            cfg.k_out * cfg.k_in + (cfg.k_out - 1)
        );
        assert_eq!(trace.dumps.len(), cfg.k_out);
    }

    #[test]
    fn spider_identical_configs_identical_traces() {
        let model = toy_model(16, 2, 29);
        let mut cfg = SpiderConfig::defaults(16, 31);
        cfg.k_out = 2;
        cfg.k_in = 2;
        cfg.batch = 4;
        cfg.mc_budget = Schedule::constant(3);
        cfg.refresh_budget = 3;
        let a = run_3p_spider(&model, &cfg, &StatVector::zeros(2)).unwrap();
        let b = run_3p_spider(&model, &cfg, &StatVector::zeros(2)).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.sq_move_over_gamma2, y.sq_move_over_gamma2);
        }
        assert_eq!(a.final_state.s_hat, b.final_state.s_hat);
    }

    #[test]
    fn online_em_rejects_empty_batch() {
        let model = toy_model(8, 2, 37);
        let cfg = OnlineEmConfig {
            steps: 2,
            batch: 0,
            gamma: Schedule::constant(0.1),
            mc_budget: Schedule::constant(2),
            sampling: SamplingMode::WithoutReplacement,
            seed: 1,
        };
        assert!(run_online_em(&model, &cfg, &StatVector::zeros(2)).is_err());
    }

    #[test]
    fn online_em_full_batch_oracle_gamma_one_is_exact_em() {
        let model = NoProx(OracleStats(toy_model(10, 2, 41)));
        let cfg = OnlineEmConfig {
            steps: 5,
            batch: 10,
            gamma: Schedule::constant(1.0),
            mc_budget: Schedule::constant(1),
            sampling: SamplingMode::WithoutReplacement,
            seed: 43,
        };
        let s0 = StatVector::from_vec(vec![0.05, -0.1]).unwrap();
        let online = run_online_em(&model, &cfg, &s0).unwrap();
        let exact = run_exact_em(&model, 5, &s0).unwrap();
        assert!(online.final_state.s_hat.sub(&exact.stats[5]).norm() <= 1e-10);
    }
}
