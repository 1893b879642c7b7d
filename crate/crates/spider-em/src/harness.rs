//! Library-level implementation of the command-line workflows: dataset
//! synthesis, multi-run experiment execution, trace aggregation and model
//! validation. The binary is a thin wrapper mapping errors to exit codes.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::algorithms::{
    run_3p_spider, run_exact_em, run_online_em, IterateDump, OnlineEmConfig, RunTrace,
    SpiderConfig, StepRecord,
};
use crate::config::{resolve, Algorithm, DatasetSource, ExperimentConfig, InitSpec, RawConfig};
use crate::data::{
    aggregate_traces, generate_synthetic, load_dataset, write_dataset, write_summary,
    write_trace, TraceFile, TraceHeader,
};
use crate::em::{LatentModel, NoProx, StatVector};
use crate::error::{Error, Result};
use crate::logit::{gradient_identity_rel_err, Dataset, LogitModel};
use crate::numerics::gibbs::{gibbs_step, GibbsState};
use crate::numerics::rng::{derive_stream, Role};
use crate::oracle::stratified_quantiles;

/// Generate a synthetic dataset file; returns its content digest.
pub fn cmd_synth(
    n: usize,
    d: usize,
    sigma2: f64,
    theta: &[f64],
    seed: u64,
    out: &Path,
) -> Result<String> {
    let data = generate_synthetic(n, d, sigma2, theta, seed)?;
    write_dataset(out, &data)?;
    let bytes = std::fs::read(out)?;
    let hash = Sha256::digest(&bytes);
    Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything `cmd_run` produced.
pub struct RunOutputs {
    pub config: ExperimentConfig,
    pub digest: String,
    pub effective_path: PathBuf,
    pub trace_paths: Vec<PathBuf>,
    pub total_epochs: f64,
}

pub fn load_or_generate(source: &DatasetSource, sigma2: f64) -> Result<Dataset> {
    match source {
        DatasetSource::Path(p) => load_dataset(p),
        DatasetSource::Synthetic { n, d, theta, seed } => {
            generate_synthetic(*n, *d, sigma2, theta, *seed)
        }
    }
}

fn build_model(cfg: &ExperimentConfig, data: Dataset) -> Result<LogitModel> {
    Ok(LogitModel::build(data, cfg.sigma2, cfg.tau, cfg.quad_order)?
        .with_sampler(cfg.sampler)
        .with_gibbs_warmup(cfg.gibbs_warmup))
}

fn initial_stat(cfg: &ExperimentConfig, d: usize) -> Result<StatVector> {
    match &cfg.init {
        InitSpec::Zero => Ok(StatVector::zeros(d)),
        InitSpec::Values(v) => {
            if v.len() != d {
                return Err(Error::InvalidConfig(format!(
                    "init has {} entries but the model dimension is {d}",
                    v.len()
                )));
            }
            StatVector::from_vec(v.clone())
        }
    }
}

fn run_one<M: LatentModel>(
    model: &M,
    cfg: &ExperimentConfig,
    init: &StatVector,
    run_seed: u64,
) -> Result<RunTrace> {
    match cfg.algorithm {
        Algorithm::ThreePSpider => {
            let spider = SpiderConfig {
                k_out: cfg.k_out,
                k_in: cfg.k_in,
                batch: cfg.batch,
                gamma_inner: cfg.gamma.clone(),
                gamma_boundary: cfg.gamma0.clone(),
                mc_budget: cfg.mc_budget.clone(),
                refresh_budget: cfg.refresh_budget,
                refresh_fraction: cfg.refresh_fraction,
                sampling: cfg.sampling,
                couple_stat_pairs: cfg.couple_stat_pairs,
                seed: run_seed,
            };
            run_3p_spider(model, &spider, init)
        }
        Algorithm::OnlineEm => {
            let online = OnlineEmConfig {
                steps: cfg.steps,
                batch: cfg.batch,
                gamma: cfg.gamma.clone(),
                mc_budget: cfg.mc_budget.clone(),
                sampling: cfg.sampling,
                seed: run_seed,
            };
            run_online_em(model, &online, init)
        }
        Algorithm::ExactEm => {
            let trace = run_exact_em(model, cfg.iters, init)?;
            // Exact EM is deterministic; express it in the common trace
            // shape with unit step size so the diagnostics stay comparable.
            let mut records = Vec::new();
            for k in 1..trace.stats.len() {
                records.push(StepRecord {
                    t: k,
                    k: 0,
                    gamma: 1.0,
                    sq_move_over_gamma2: trace.stats[k].sq_dist(&trace.stats[k - 1]),
                    epochs: k as f64,
                    wall_ms: 0.0,
                });
            }
            let last = trace.stats.len() - 1;
            Ok(RunTrace {
                records,
                dumps: vec![IterateDump {
                    t: last.max(1),
                    k: 1,
                    s: trace.stats[last].clone(),
                }],
                final_state: crate::em::IterateState {
                    s_hat: trace.stats[last].clone(),
                    s_cv: trace.stats[last].clone(),
                    t: last.max(1),
                    k: 0,
                },
            })
        }
    }
}

/// Execute `runs` independent runs (seeds `seed + r`, common start) and
/// write one trace file per run plus the resolved config.
pub fn cmd_run(raw: &RawConfig) -> Result<RunOutputs> {
    let source = raw.dataset_source()?;
    let sigma2: f64 = match raw.get("sigma2") {
        Some(v) => v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value for sigma2: {v:?}")))?,
        None => 0.1,
    };
    let data = load_or_generate(&source, sigma2)?;
    let cfg = resolve(raw, data.n())?;
    if cfg.runs == 0 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    let model = build_model(&cfg, data)?;
    execute_runs(&model, &cfg)
}

/// Run an already-resolved experiment against an already-built model.
pub fn execute_runs(model: &LogitModel, cfg: &ExperimentConfig) -> Result<RunOutputs> {
    let digest = cfg.digest();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let effective_path = cfg.out_dir.join("effective.cfg");
    std::fs::write(&effective_path, cfg.canonical_string())?;

    let init = initial_stat(cfg, model.stat_dim())?;
    let traces: Vec<RunTrace> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let run_seed = cfg.seed.wrapping_add(r as u64);
            if cfg.prox {
                run_one(model, cfg, &init, run_seed)
            } else {
                run_one(&NoProx(model), cfg, &init, run_seed)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let k_in_label = match cfg.algorithm {
        Algorithm::ThreePSpider => cfg.k_in,
        _ => 1,
    };
    let mut trace_paths = Vec::with_capacity(cfg.runs);
    for (r, trace) in traces.iter().enumerate() {
        let header = TraceHeader {
            run_id: format!("run{r:03}"),
            seed: cfg.seed.wrapping_add(r as u64),
            algorithm: cfg.algorithm.name().to_string(),
            k_in: k_in_label,
            config_digest: digest.clone(),
        };
        let mut file = TraceFile::from_run(header, trace, cfg.record_timing);
        if !cfg.dump_iterates {
            file.dumps.clear();
        }
        let path = cfg.out_dir.join(format!("trace_run{r:03}.csv"));
        write_trace(&path, &file)?;
        trace_paths.push(path);
    }

    Ok(RunOutputs {
        total_epochs: traces.first().map_or(0.0, RunTrace::total_epochs),
        config: cfg.clone(),
        digest,
        effective_path,
        trace_paths,
    })
}

/// Aggregate all trace files in a directory into a summary CSV.
pub fn cmd_aggregate(dir: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map_or(false, |n| n.starts_with("trace_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    let summary = aggregate_traces(&paths)?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("summary.csv"));
    write_summary(&out_path, &summary)?;
    Ok(out_path)
}

/// Composite model validation: structural checks at probe points, the
/// preconditioned-gradient identity, invariance of the Gibbs kernel, and the
/// variational inequality of the prox. Returns the report text, or a
/// `ValidationFailed` error carrying it.
pub fn cmd_validate(raw: &RawConfig) -> Result<String> {
    let source = raw.dataset_source()?;
    let sigma2: f64 = match raw.get("sigma2") {
        Some(v) => v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value for sigma2: {v:?}")))?,
        None => 0.1,
    };
    let data = load_or_generate(&source, sigma2)?;
    let cfg = resolve(raw, data.n())?;
    let model = build_model(&cfg, data)?;
    validate_logit_model(&model, cfg.seed)
}

pub fn validate_logit_model(model: &LogitModel, seed: u64) -> Result<String> {
    let mut report = String::new();
    let mut failed = false;
    let d = model.stat_dim();

    // Structural checks at the origin and two random feasible points.
    let mut stream = derive_stream(seed, 0, 0, 0, Role::Aux);
    let probes = vec![
        StatVector::zeros(d),
        model.random_feasible(0.5, &mut stream),
        model.random_feasible(0.95, &mut stream),
    ];
    let structural = crate::em::validate_model(model, &probes, seed)?;
    report.push_str(&structural.summary());
    failed |= !structural.passed();

    // Gradient identity at random feasible points.
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let s = model.random_feasible(0.8, &mut stream);
        let err = gradient_identity_rel_err(model, &s, 1e-5)?;
        worst = worst.max(err);
    }
    let grad_ok = worst <= 1e-5;
    report.push_str(&format!(
        "gradient identity: worst relative error {worst:.3e} {}\n",
        if grad_ok { "[ok]" } else { "[FAIL]" }
    ));
    failed |= !grad_ok;

    // Gibbs invariance from quadrature-stratified starts.
    let gibbs_ok = gibbs_invariance_check(model, seed, &mut report)?;
    failed |= !gibbs_ok;

    // Variational inequality of the prox against sampled feasible points.
    let prox_ok = prox_variational_check(model, seed, &mut report);
    failed |= !prox_ok;

    if failed {
        Err(Error::ValidationFailed(report))
    } else {
        Ok(report)
    }
}

/// One Gibbs sweep from 200 stratified starts must preserve the posterior's
/// first two moments within Monte Carlo error (5 SE over 1e5 chains).
pub fn gibbs_invariance_check(
    model: &LogitModel,
    seed: u64,
    report: &mut String,
) -> Result<bool> {
    let mut all_ok = true;
    let mut stream = derive_stream(seed, 1, 0, 0, Role::Aux);
    let n = model.n_examples();
    for probe in 0..3usize {
        let s = model.random_feasible(0.3 + 0.3 * probe as f64, &mut stream);
        let i = (probe * (n / 3).max(1)).min(n - 1);
        let params = model.posterior_params(i, &s);
        let sigma = params.sigma2.sqrt();
        let lo = params.m - 10.0 * sigma;
        let hi = params.m + 10.0 * sigma;
        let dens = |z: f64| {
            crate::numerics::gibbs::sigmoid(params.y * params.c * z)
                * (-((z - params.m) * (z - params.m)) / (2.0 * params.sigma2)).exp()
        };
        let strata = stratified_quantiles(dens, lo, hi, 200);
        // Quadrature moments of the posterior.
        let rule = crate::numerics::quadrature::gauss_hermite(200)?;
        let scale = (2.0 * params.sigma2).sqrt();
        let mut acc = [0.0_f64; 5];
        for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
            let z = params.m + scale * u;
            let g = w * crate::numerics::gibbs::sigmoid(params.y * params.c * z);
            let mut zp = 1.0;
            for a in acc.iter_mut() {
                *a += g * zp;
                zp *= z;
            }
        }
        let mean = acc[1] / acc[0];
        let second = acc[2] / acc[0];
        let var = second - mean * mean;
        let var_z2 = acc[4] / acc[0] - second * second;

        let chains = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        let samples: Vec<f64> = (0..chains)
            .into_par_iter()
            .map(|j| {
                let mut st = derive_stream(seed, 2 + probe as u64, j as i64, i as u64, Role::Aux);
                let state = GibbsState {
                    z: strata[j % strata.len()],
                    params,
                };
                gibbs_step(&state, &mut st).z
            })
            .collect();
        for z in samples {
            s1 += z;
            s2 += z * z;
        }
        let m1 = s1 / chains as f64;
        let m2 = s2 / chains as f64;
        let se1 = (var / chains as f64).sqrt();
        let se2 = (var_z2 / chains as f64).sqrt();
        let ok = (m1 - mean).abs() <= 5.0 * se1 && (m2 - second).abs() <= 5.0 * se2;
        report.push_str(&format!(
            "gibbs invariance (example {i}): mean {m1:.6} vs {mean:.6} (5se {:.2e}), second {m2:.6} vs {second:.6} (5se {:.2e}) {}\n",
            5.0 * se1,
            5.0 * se2,
            if ok { "[ok]" } else { "[FAIL]" }
        ));
        all_ok &= ok;
    }
    Ok(all_ok)
}

/// The prox output must satisfy the variational inequality
/// `½(p − s')ᵀB(p − s') ≤ ½(u − s')ᵀB(u − s') + 1e-8` for every feasible u
/// (the indicator term vanishes on feasible points).
pub fn prox_variational_check(model: &LogitModel, seed: u64, report: &mut String) -> bool {
    let mut stream = derive_stream(seed, 3, 0, 0, Role::Aux);
    let d = model.stat_dim();
    let b = model.preconditioner_at(&StatVector::zeros(d));
    let mut worst = f64::NEG_INFINITY;
    for rep in 0..50 {
        // Half the probes start far outside the constraint set.
        let scale = if rep % 2 == 0 { 0.7 } else { 9.0 };
        let s_prime = model.random_feasible(1.0, &mut stream).scaled(scale);
        let p = model.weighted_prox(&b, 0.7, &s_prime);
        let pv = 0.5 * b.quadratic_form(p.sub(&s_prime).as_array());
        for _ in 0..200 {
            let u = model.random_feasible(0.999 * stream.uniform(), &mut stream);
            let uv = 0.5 * b.quadratic_form(u.sub(&s_prime).as_array());
            worst = worst.max(pv - uv);
        }
    }
    let ok = worst <= 1e-8;
    report.push_str(&format!(
        "prox variational inequality: worst excess {worst:.3e} {}\n",
        if ok { "[ok]" } else { "[FAIL]" }
    ));
    ok
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_raw(extra: &str) -> RawConfig {
        RawConfig::parse(&format!(
            "synth_n=40\nsynth_d=2\nsigma2=0.5\nk_out=2\nk_in=2\nbatch=10\nmc_budget=4\nrefresh_budget=4\nruns=2\nseed=5\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn cmd_run_writes_traces_and_effective_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut raw = small_raw("");
        raw.set("out_dir", dir.path().to_str().unwrap()).unwrap();
        let out = cmd_run(&raw).unwrap();
        assert_eq!(out.trace_paths.len(), 2);
        assert!(out.effective_path.exists());
        for p in &out.trace_paths {
            let trace = crate::data::read_trace(p).unwrap();
            assert_eq!(trace.header.config_digest, out.digest);
            assert!(!trace.rows.is_empty());
            assert!(!trace.dumps.is_empty());
        }
        // Round-trip of the effective config preserves the digest.
        let text = std::fs::read_to_string(&out.effective_path).unwrap();
        let reparsed = resolve(&RawConfig::parse(&text).unwrap(), 40).unwrap();
        assert_eq!(reparsed.digest(), out.digest);
    }

    #[test]
    fn cmd_run_then_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let mut raw = small_raw("");
        raw.set("out_dir", dir.path().to_str().unwrap()).unwrap();
        let out = cmd_run(&raw).unwrap();
        let summary_path = cmd_aggregate(dir.path(), None).unwrap();
        assert!(summary_path.exists());
        let summary = std::fs::read_to_string(summary_path).unwrap();
        assert!(summary.contains("mean_sq_move_over_gamma2"));
        assert!(out.total_epochs > 0.0);
    }

    #[test]
    fn cmd_synth_digest_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        let d1 = cmd_synth(50, 3, 0.1, &[0.0, 0.0, 0.0], 7, &p1).unwrap();
        let d2 = cmd_synth(50, 3, 0.1, &[0.0, 0.0, 0.0], 7, &p2).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn validate_passes_on_toy_model() {
        let data = generate_synthetic(25, 2, 0.5, &[0.2, 0.1], 3).unwrap();
        let model = LogitModel::build(data, 0.5, 1.0, 128).unwrap();
        let report = validate_logit_model(&model, 11).unwrap();
        assert!(report.contains("[ok]"));
        assert!(!report.contains("FAIL"));
    }

    #[test]
    fn validate_catches_missing_dataset() {
        let raw = RawConfig::parse("dataset=/no/such/file.csv\n").unwrap();
        assert!(matches!(cmd_validate(&raw).unwrap_err(), Error::Io(_)));
    }
}
