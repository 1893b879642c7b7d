//! Dataset ingestion, synthetic data generation, and trace persistence and
//! aggregation across independent runs.
//!
//! Both file formats are plain CSV. Floats are serialized with 17
//! significant digits so a read-back is lossless.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::algorithms::{IterateDump, RunTrace};
use crate::error::{Error, Result};
use crate::logit::Dataset;
use crate::numerics::gibbs::sigmoid;
use crate::numerics::rng::{derive_stream, Role};

const TRACE_VERSION: &str = "spider-em-trace v1";
const SUMMARY_VERSION: &str = "spider-em-summary v1";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Draw a dataset from the generative model: covariates with a trailing
/// intercept column of ones, a scalar latent z ~ N(⟨X,θ*⟩/‖X‖, σ²) per
/// example, and labels +1 with probability (1 + exp(-‖X‖ z))⁻¹.
pub fn generate_synthetic(
    n: usize,
    d: usize,
    sigma2: f64,
    theta_star: &[f64],
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidConfig(format!(
            "synthetic dataset needs n >= 1 and d >= 1, got n={n}, d={d}"
        )));
    }
    if theta_star.len() != d {
        return Err(Error::DimensionMismatch {
            what: "theta_star",
            expected: d,
            got: theta_star.len(),
            index: 0,
        });
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma2 must be positive, got {sigma2}")));
    }
    let mut stream = derive_stream(seed, 0, 0, 0, Role::Synthetic);
    let sigma = sigma2.sqrt();
    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..d.saturating_sub(1) {
            features[(i, j)] = StandardNormal.sample(&mut stream);
        }
        features[(i, d - 1)] = 1.0; // intercept
        let row = features.row(i);
        let norm = row.dot(&row).sqrt();
        let mean = row
            .iter()
            .zip(theta_star)
            .map(|(x, th)| x * th)
            .sum::<f64>()
            / norm;
        let eps: f64 = StandardNormal.sample(&mut stream);
        let z = mean + sigma * eps;
        let y = if stream.uniform() < sigmoid(norm * z) { 1 } else { -1 };
        labels.push(y);
    }
    Dataset::new(features, labels)
}

/// Parse the dataset CSV format. Header `label,f1,...,fD` with an optional
/// trailing `intercept=yes|no` token; `intercept=yes` appends a column of
/// ones to every row.
pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or(Error::EmptyInput("dataset file"))??;
    let mut cols: Vec<&str> = header.trim().split(',').collect();
    let mut intercept = false;
    if let Some(last) = cols.last() {
        if let Some(flag) = last.strip_prefix("intercept=") {
            intercept = match flag {
                "yes" => true,
                "no" => false,
                other => {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("intercept flag must be yes or no, got {other}"),
                    })
                }
            };
            cols.pop();
        }
    }
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header must be label,f1,...,fD[,intercept=yes|no]".into(),
        });
    }
    let raw_d = cols.len() - 1;
    let d = raw_d + usize::from(intercept);

    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<i8> = Vec::new();
    let mut n = 0usize;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != raw_d + 1 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} fields, got {}", raw_d + 1, fields.len()),
            });
        }
        let label: i64 = fields[0].trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad label {:?}", fields[0]),
        })?;
        if label != 1 && label != -1 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("label must be -1 or +1, got {label}"),
            });
        }
        labels.push(label as i8);
        for f in &fields[1..] {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature value {f:?}"),
            })?;
            rows.push(v);
        }
        if intercept {
            rows.push(1.0);
        }
        n += 1;
    }
    let features = Array2::from_shape_vec((n, d), rows).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    Dataset::new(features, labels)
}

/// Write a dataset in the CSV format understood by [`load_dataset`].
pub fn write_dataset<P: AsRef<Path>>(path: P, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    out.push_str("label");
    for j in 1..=data.dim() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for i in 0..data.n() {
        let _ = write!(out, "{}", data.labels()[i]);
        for v in data.row(i) {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Run metadata carried in a trace header.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub run_id: String,
    pub seed: u64,
    pub algorithm: String,
    /// Inner loop length; rows with k = k_in are outer-boundary moves.
    pub k_in: usize,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub k: i64,
    pub gamma: f64,
    pub sq_move_over_gamma2: f64,
    pub epochs: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub rows: Vec<TraceRow>,
    pub dumps: Vec<IterateDump>,
}

impl TraceFile {
    /// Assemble a trace file from a run. Wall-clock per row is recorded only
    /// when `keep_timing` is set; the default zero keeps byte-identical
    /// outputs across repeated executions.
    pub fn from_run(header: TraceHeader, trace: &RunTrace, keep_timing: bool) -> Self {
        let rows = trace
            .records
            .iter()
            .map(|r| TraceRow {
                t: r.t,
                k: r.k,
                gamma: r.gamma,
                sq_move_over_gamma2: r.sq_move_over_gamma2,
                epochs: r.epochs,
                wall_ms: if keep_timing { r.wall_ms } else { 0.0 },
            })
            .collect();
        TraceFile {
            header,
            rows,
            dumps: trace.dumps.clone(),
        }
    }
}

pub fn write_trace<P: AsRef<Path>>(path: P, trace: &TraceFile) -> Result<()> {
    debug_assert!(
        trace.rows.windows(2).all(|w| (w[0].t, w[0].k) < (w[1].t, w[1].k)),
        "trace rows must be strictly ordered by (t, k)"
    );
    let mut out = String::new();
    let _ = writeln!(out, "# {TRACE_VERSION}");
    let _ = writeln!(out, "# run_id={}", trace.header.run_id);
    let _ = writeln!(out, "# seed={}", trace.header.seed);
    let _ = writeln!(out, "# algorithm={}", trace.header.algorithm);
    let _ = writeln!(out, "# k_in={}", trace.header.k_in);
    let _ = writeln!(out, "# config_digest={}", trace.header.config_digest);
    for dump in &trace.dumps {
        let entries: Vec<String> = dump.s.as_slice().iter().map(|v| fmt_f64(*v)).collect();
        let _ = writeln!(out, "# dump t={} k={} s={}", dump.t, dump.k, entries.join(";"));
    }
    let _ = writeln!(out, "t,k,gamma,sq_move_over_gamma2,epochs,wall_ms");
    for r in &trace.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            r.k,
            fmt_f64(r.gamma),
            fmt_f64(r.sq_move_over_gamma2),
            fmt_f64(r.epochs),
            fmt_f64(r.wall_ms)
        );
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_trace<P: AsRef<Path>>(path: P) -> Result<TraceFile> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(Error::EmptyInput("trace file"))?;
    let version = first.trim_start_matches('#').trim();
    if version != TRACE_VERSION {
        return Err(Error::VersionMismatch {
            expected: TRACE_VERSION.into(),
            found: version.into(),
        });
    }
    let mut run_id = None;
    let mut seed = None;
    let mut algorithm = None;
    let mut k_in = None;
    let mut config_digest = None;
    let mut dumps = Vec::new();
    let mut rows = Vec::new();
    let mut in_body = false;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim();
            if let Some(rest) = meta.strip_prefix("dump ") {
                dumps.push(parse_dump(rest, lineno)?);
            } else if let Some((key, value)) = meta.split_once('=') {
                match key {
                    "run_id" => run_id = Some(value.to_string()),
                    "seed" => {
                        seed = Some(value.parse().map_err(|_| Error::Parse {
                            line: lineno,
                            message: format!("bad seed {value:?}"),
                        })?)
                    }
                    "algorithm" => algorithm = Some(value.to_string()),
                    "k_in" => {
                        k_in = Some(value.parse().map_err(|_| Error::Parse {
                            line: lineno,
                            message: format!("bad k_in {value:?}"),
                        })?)
                    }
                    "config_digest" => config_digest = Some(value.to_string()),
                    _ => {
                        return Err(Error::Parse {
                            line: lineno,
                            message: format!("unknown header key {key:?}"),
                        })
                    }
                }
            } else {
                return Err(Error::Parse {
                    line: lineno,
                    message: "malformed header line".into(),
                });
            }
            continue;
        }
        if !in_body {
            if line.trim() != "t,k,gamma,sq_move_over_gamma2,epochs,wall_ms" {
                return Err(Error::Parse {
                    line: lineno,
                    message: "missing column header".into(),
                });
            }
            in_body = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 6 columns, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad float {s:?}"),
            })
        };
        rows.push(TraceRow {
            t: fields[0].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad t {:?}", fields[0]),
            })?,
            k: fields[1].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad k {:?}", fields[1]),
            })?,
            gamma: parse_f(fields[2])?,
            sq_move_over_gamma2: parse_f(fields[3])?,
            epochs: parse_f(fields[4])?,
            wall_ms: parse_f(fields[5])?,
        });
    }
    let missing = |what: &str| Error::Parse {
        line: 0,
        message: format!("missing header key {what}"),
    };
    if !rows.windows(2).all(|w| (w[0].t, w[0].k) < (w[1].t, w[1].k)) {
        return Err(Error::Parse {
            line: 0,
            message: "rows are not ordered by (t, k)".into(),
        });
    }
    Ok(TraceFile {
        header: TraceHeader {
            run_id: run_id.ok_or_else(|| missing("run_id"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            algorithm: algorithm.ok_or_else(|| missing("algorithm"))?,
            k_in: k_in.ok_or_else(|| missing("k_in"))?,
            config_digest: config_digest.ok_or_else(|| missing("config_digest"))?,
        },
        rows,
        dumps,
    })
}

fn parse_dump(rest: &str, lineno: usize) -> Result<IterateDump> {
    let mut t = None;
    let mut k = None;
    let mut s = None;
    for token in rest.split_whitespace() {
        if let Some(v) = token.strip_prefix("t=") {
            t = v.parse::<usize>().ok();
        } else if let Some(v) = token.strip_prefix("k=") {
            k = v.parse::<i64>().ok();
        } else if let Some(v) = token.strip_prefix("s=") {
            let parsed: std::result::Result<Vec<f64>, _> =
                v.split(';').map(|x| x.parse::<f64>()).collect();
            s = parsed.ok();
        }
    }
    match (t, k, s) {
        (Some(t), Some(k), Some(entries)) => Ok(IterateDump {
            t,
            k,
            s: crate::em::StatVector::from_vec(entries).map_err(|_| Error::Parse {
                line: lineno,
                message: "non-finite dump entries".into(),
            })?,
        }),
        _ => Err(Error::Parse {
            line: lineno,
            message: "malformed dump line".into(),
        }),
    }
}

/// Sample mean and the half-width of a 95% normal confidence interval.
pub fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Per-(t, k) aggregate across runs.
#[derive(Debug, Clone)]
pub struct AggregateCell {
    pub t: usize,
    pub k: i64,
    /// Cumulated number of inner loops at this row (boundary rows share the
    /// end-of-loop coordinate t·k_in).
    pub inner_cum: f64,
    pub epochs: f64,
    pub gamma: f64,
    pub mean: f64,
    pub ci95_half: f64,
    pub runs: usize,
}

#[derive(Debug, Clone)]
pub struct AggregateSummary {
    pub config_digest: String,
    pub k_in: usize,
    pub cells: Vec<AggregateCell>,
}

impl AggregateSummary {
    /// Cells with k = k_in: the per-outer-loop markers.
    pub fn outer_markers(&self) -> impl Iterator<Item = &AggregateCell> {
        self.cells.iter().filter(move |c| c.k == self.k_in as i64)
    }
}

/// Aggregate traces produced under one config digest. Paths are sorted
/// before reading so the reduction order never depends on the caller.
pub fn aggregate_traces(paths: &[PathBuf]) -> Result<AggregateSummary> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("trace paths"));
    }
    let mut sorted: Vec<PathBuf> = paths.to_vec();
    sorted.sort();
    let traces: Vec<TraceFile> = sorted
        .par_iter()
        .map(read_trace)
        .collect::<Result<Vec<_>>>()?;
    let digest = traces[0].header.config_digest.clone();
    let k_in = traces[0].header.k_in;
    for t in &traces[1..] {
        if t.header.config_digest != digest {
            return Err(Error::DigestMismatch {
                a: digest,
                b: t.header.config_digest.clone(),
            });
        }
    }
    let grid: Vec<(usize, i64)> = traces[0].rows.iter().map(|r| (r.t, r.k)).collect();
    for t in &traces[1..] {
        let other: Vec<(usize, i64)> = t.rows.iter().map(|r| (r.t, r.k)).collect();
        if other != grid {
            return Err(Error::Parse {
                line: 0,
                message: "traces do not share the same (t, k) grid".into(),
            });
        }
    }
    let runs = traces.len();
    let mut cells = Vec::with_capacity(grid.len());
    for (row_idx, &(t, k)) in grid.iter().enumerate() {
        let values: Vec<f64> = traces
            .iter()
            .map(|tr| tr.rows[row_idx].sq_move_over_gamma2)
            .collect();
        let (mean, ci95_half) = mean_and_ci(&values);
        let inner_cum = if k == k_in as i64 {
            (t * k_in) as f64
        } else {
            ((t - 1) * k_in) as f64 + (k + 1) as f64
        };
        cells.push(AggregateCell {
            t,
            k,
            inner_cum,
            epochs: traces[0].rows[row_idx].epochs,
            gamma: traces[0].rows[row_idx].gamma,
            mean,
            ci95_half,
            runs,
        });
    }
    Ok(AggregateSummary {
        config_digest: digest,
        k_in,
        cells,
    })
}

pub fn write_summary<P: AsRef<Path>>(path: P, summary: &AggregateSummary) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# {SUMMARY_VERSION}");
    let _ = writeln!(out, "# config_digest={}", summary.config_digest);
    let _ = writeln!(out, "# k_in={}", summary.k_in);
    let _ = writeln!(out, "t,k,inner_cum,epochs,gamma,mean_sq_move_over_gamma2,ci95_half,runs");
    for c in &summary.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.t,
            c.k,
            fmt_f64(c.inner_cum),
            fmt_f64(c.epochs),
            fmt_f64(c.gamma),
            fmt_f64(c.mean),
            fmt_f64(c.ci95_half),
            c.runs
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}
