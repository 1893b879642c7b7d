//! Experiment configuration: a flat key=value file format, command-line
//! overrides, default resolution against the dataset size, canonical
//! serialization and a platform-stable digest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::algorithms::{
    default_batch, default_k_in, default_mc_budget, default_refresh_budget, SamplingMode,
    Schedule,
};
use crate::error::{Error, Result};
use crate::logit::SamplerKind;

pub const KNOWN_KEYS: &[&str] = &[
    "algorithm",
    "dataset",
    "synth_n",
    "synth_d",
    "synth_theta",
    "synth_seed",
    "sigma2",
    "tau",
    "quad_order",
    "sampler",
    "gibbs_warmup",
    "k_out",
    "k_in",
    "batch",
    "gamma",
    "gamma0",
    "mc_budget",
    "refresh_budget",
    "refresh_fraction",
    "sampling",
    "couple_stat_pairs",
    "prox",
    "steps",
    "iters",
    "runs",
    "seed",
    "init",
    "out_dir",
    "dump_iterates",
    "record_timing",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    ThreePSpider,
    OnlineEm,
    ExactEm,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::ThreePSpider => "3p-spider",
            Algorithm::OnlineEm => "online-em",
            Algorithm::ExactEm => "exact-em",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Path(String),
    Synthetic {
        n: usize,
        d: usize,
        theta: Vec<f64>,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Zero,
    Values(Vec<f64>),
}

/// Raw key=value pairs, as parsed from a file plus overrides.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    map: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(RawConfig { map })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
        }
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::InvalidConfig(format!("bad value for {key}: {v:?}"))
            }),
        }
    }

    fn parse_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::InvalidConfig(format!(
                "bad value for {key}: {v:?} (expected true or false)"
            ))),
        }
    }

    /// The dataset source, needed before the rest can be resolved.
    pub fn dataset_source(&self) -> Result<DatasetSource> {
        match self.get("dataset").unwrap_or("synthetic") {
            "synthetic" => {
                let n = self.parse_or("synth_n", 2000usize)?;
                let d = self.parse_or("synth_d", 5usize)?;
                let seed = self.parse_or("synth_seed", 0u64)?;
                let theta = match self.get("synth_theta").unwrap_or("zero") {
                    "zero" => vec![0.0; d],
                    list => parse_float_list(list, "synth_theta")?,
                };
                if theta.len() != d {
                    return Err(Error::InvalidConfig(format!(
                        "synth_theta has {} entries but synth_d={d}",
                        theta.len()
                    )));
                }
                Ok(DatasetSource::Synthetic { n, d, theta, seed })
            }
            path => Ok(DatasetSource::Path(path.to_string())),
        }
    }
}

fn parse_float_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} entry {tok:?}")))
        })
        .collect()
}

fn parse_f64_schedule(text: &str, key: &str) -> Result<Schedule<f64>> {
    if !text.contains(':') {
        let v = text
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: {text:?}")))?;
        return Schedule::from_pieces(vec![(1, v)]);
    }
    let mut pieces = Vec::new();
    for tok in text.split(',') {
        let (t, v) = tok.split_once(':').ok_or_else(|| {
            Error::InvalidConfig(format!("bad schedule piece for {key}: {tok:?}"))
        })?;
        let t = t.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!("bad schedule index for {key}: {t:?}"))
        })?;
        let v = v.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!("bad schedule value for {key}: {v:?}"))
        })?;
        pieces.push((t, v));
    }
    Schedule::from_pieces(pieces)
}

fn parse_usize_schedule(text: &str, key: &str, auto: usize) -> Result<Schedule<usize>> {
    if text == "auto" {
        return Schedule::from_pieces(vec![(1, auto)]);
    }
    if !text.contains(':') {
        let v = text
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: {text:?}")))?;
        return Schedule::from_pieces(vec![(1, v)]);
    }
    let mut pieces = Vec::new();
    for tok in text.split(',') {
        let (t, v) = tok.split_once(':').ok_or_else(|| {
            Error::InvalidConfig(format!("bad schedule piece for {key}: {tok:?}"))
        })?;
        let t = t.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!("bad schedule index for {key}: {t:?}"))
        })?;
        let v = v.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!("bad schedule value for {key}: {v:?}"))
        })?;
        pieces.push((t, v));
    }
    Schedule::from_pieces(pieces)
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub dataset: DatasetSource,
    pub sigma2: f64,
    pub tau: f64,
    pub quad_order: usize,
    pub sampler: SamplerKind,
    pub gibbs_warmup: usize,
    pub k_out: usize,
    pub k_in: usize,
    pub batch: usize,
    pub gamma: Schedule<f64>,
    pub gamma0: Schedule<f64>,
    pub mc_budget: Schedule<usize>,
    pub refresh_budget: usize,
    pub refresh_fraction: f64,
    pub sampling: SamplingMode,
    pub couple_stat_pairs: bool,
    pub prox: bool,
    pub steps: usize,
    pub iters: usize,
    pub runs: usize,
    pub seed: u64,
    pub init: InitSpec,
    pub out_dir: PathBuf,
    pub dump_iterates: bool,
    pub record_timing: bool,
}

/// Resolve a raw config against the dataset size `n`.
pub fn resolve(raw: &RawConfig, n: usize) -> Result<ExperimentConfig> {
    let algorithm = match raw.get("algorithm").unwrap_or("3p-spider") {
        "3p-spider" => Algorithm::ThreePSpider,
        "online-em" => Algorithm::OnlineEm,
        "exact-em" => Algorithm::ExactEm,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown algorithm {other:?} (expected 3p-spider, online-em or exact-em)"
            )))
        }
    };
    let sampler = match raw.get("sampler").unwrap_or("gibbs") {
        "gibbs" => SamplerKind::Gibbs,
        "rejection" => SamplerKind::RejectionIid,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown sampler {other:?} (expected gibbs or rejection)"
            )))
        }
    };
    let sampling = match raw.get("sampling").unwrap_or("without") {
        "without" => SamplingMode::WithoutReplacement,
        "with" => SamplingMode::WithReplacement,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown sampling mode {other:?} (expected without or with)"
            )))
        }
    };

    let k_out = raw.parse_or("k_out", 20usize)?;
    let k_in = match raw.get("k_in").unwrap_or("auto") {
        "auto" => default_k_in(n),
        v => v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value for k_in: {v:?}")))?,
    };
    let batch = match raw.get("batch").unwrap_or("auto") {
        "auto" => default_batch(n),
        v => v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value for batch: {v:?}")))?,
    };
    let refresh_budget = match raw.get("refresh_budget").unwrap_or("auto") {
        "auto" => default_refresh_budget(n),
        v => v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value for refresh_budget: {v:?}")))?,
    };
    let refresh_fraction = raw.parse_or("refresh_fraction", 1.0f64)?;
    let gamma = parse_f64_schedule(raw.get("gamma").unwrap_or("0.1"), "gamma")?;
    let gamma0 = parse_f64_schedule(raw.get("gamma0").unwrap_or("0.1"), "gamma0")?;
    let mc_budget = parse_usize_schedule(
        raw.get("mc_budget").unwrap_or("auto"),
        "mc_budget",
        default_mc_budget(n),
    )?;

    // Online-EM default: the same total epoch budget as the 3P-SPIDER
    // configuration resolved above (inner passes plus refreshes).
    let steps = match raw.get("steps").unwrap_or("auto") {
        "auto" => {
            let refresh = crate::algorithms::refresh_size(n, refresh_fraction)?;
            let per_outer = (k_in * batch + refresh) as f64;
            ((k_out as f64 * per_outer) / batch as f64).ceil() as usize
        }
        v => v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value for steps: {v:?}")))?,
    };

    let init = match raw.get("init").unwrap_or("zero") {
        "zero" => InitSpec::Zero,
        list => InitSpec::Values(parse_float_list(list, "init")?),
    };

    Ok(ExperimentConfig {
        algorithm,
        dataset: raw.dataset_source()?,
        sigma2: raw.parse_or("sigma2", 0.1f64)?,
        tau: raw.parse_or("tau", 1.0f64)?,
        quad_order: raw.parse_or("quad_order", crate::logit::DEFAULT_QUAD_ORDER)?,
        sampler,
        gibbs_warmup: raw.parse_or("gibbs_warmup", crate::logit::DEFAULT_GIBBS_WARMUP)?,
        k_out,
        k_in,
        batch,
        gamma,
        gamma0,
        mc_budget,
        refresh_budget,
        refresh_fraction,
        sampling,
        couple_stat_pairs: raw.parse_bool("couple_stat_pairs", false)?,
        prox: raw.parse_bool("prox", true)?,
        steps,
        iters: raw.parse_or("iters", 100usize)?,
        runs: raw.parse_or("runs", 1usize)?,
        seed: raw.parse_or("seed", 0u64)?,
        init,
        out_dir: PathBuf::from(raw.get("out_dir").unwrap_or(".")),
        dump_iterates: raw.parse_bool("dump_iterates", true)?,
        record_timing: raw.parse_bool("record_timing", false)?,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_f64_schedule(s: &Schedule<f64>) -> String {
    s.pieces()
        .iter()
        .map(|(t, v)| format!("{t}:{}", fmt_f64(*v)))
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_usize_schedule(s: &Schedule<usize>) -> String {
    s.pieces()
        .iter()
        .map(|(t, v)| format!("{t}:{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Canonical key=value form with every default resolved. Reparsing this
    /// text yields the same canonical form (and therefore the same digest).
    /// Output-only preferences (out_dir, dump_iterates, record_timing) are
    /// not part of the canonical description.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "algorithm={}", self.algorithm.name());
        match &self.dataset {
            DatasetSource::Path(p) => {
                let _ = writeln!(out, "dataset={p}");
            }
            DatasetSource::Synthetic { n, d, theta, seed } => {
                let _ = writeln!(out, "dataset=synthetic");
                let _ = writeln!(out, "synth_n={n}");
                let _ = writeln!(out, "synth_d={d}");
                let theta_s: Vec<String> = theta.iter().map(|v| fmt_f64(*v)).collect();
                let _ = writeln!(out, "synth_theta={}", theta_s.join(","));
                let _ = writeln!(out, "synth_seed={seed}");
            }
        }
        let _ = writeln!(out, "sigma2={}", fmt_f64(self.sigma2));
        let _ = writeln!(out, "tau={}", fmt_f64(self.tau));
        let _ = writeln!(out, "quad_order={}", self.quad_order);
        let _ = writeln!(
            out,
            "sampler={}",
            match self.sampler {
                SamplerKind::Gibbs => "gibbs",
                SamplerKind::RejectionIid => "rejection",
            }
        );
        let _ = writeln!(out, "gibbs_warmup={}", self.gibbs_warmup);
        let _ = writeln!(out, "k_out={}", self.k_out);
        let _ = writeln!(out, "k_in={}", self.k_in);
        let _ = writeln!(out, "batch={}", self.batch);
        let _ = writeln!(out, "gamma={}", fmt_f64_schedule(&self.gamma));
        let _ = writeln!(out, "gamma0={}", fmt_f64_schedule(&self.gamma0));
        let _ = writeln!(out, "mc_budget={}", fmt_usize_schedule(&self.mc_budget));
        let _ = writeln!(out, "refresh_budget={}", self.refresh_budget);
        let _ = writeln!(out, "refresh_fraction={}", fmt_f64(self.refresh_fraction));
        let _ = writeln!(
            out,
            "sampling={}",
            match self.sampling {
                SamplingMode::WithoutReplacement => "without",
                SamplingMode::WithReplacement => "with",
            }
        );
        let _ = writeln!(out, "couple_stat_pairs={}", self.couple_stat_pairs);
        let _ = writeln!(out, "prox={}", self.prox);
        let _ = writeln!(out, "steps={}", self.steps);
        let _ = writeln!(out, "iters={}", self.iters);
        let _ = writeln!(out, "runs={}", self.runs);
        let _ = writeln!(out, "seed={}", self.seed);
        match &self.init {
            InitSpec::Zero => {
                let _ = writeln!(out, "init=zero");
            }
            InitSpec::Values(v) => {
                let vs: Vec<String> = v.iter().map(|x| fmt_f64(*x)).collect();
                let _ = writeln!(out, "init={}", vs.join(","));
            }
        }
        out
    }

    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical_string().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}
