use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spider_em::config::RawConfig;
use spider_em::error::{Error, Result};
use spider_em::harness;

/// 3P-SPIDER experiments on the latent logistic-regression model.
///
/// Worker count is controlled by the RAYON_NUM_THREADS environment variable
/// and never affects results.
#[derive(Parser)]
#[command(name = "spider-em", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV and print its digest.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma2: f64,
        /// Comma-separated true parameter, or "zero".
        #[arg(long, default_value = "zero")]
        theta: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute the configured runs and write one trace file per run.
    Run {
        /// Config file (flat key=value lines). Any key can be overridden by
        /// trailing `--key value` pairs.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Aggregate the trace files in a directory into a summary CSV.
    Aggregate {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the model validation suite; nonzero exit on any failed check.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut iter = tokens.iter();
    while let Some(tok) = iter.next() {
        let key = tok.strip_prefix("--").ok_or_else(|| {
            Error::InvalidConfig(format!("expected --key value pairs, got {tok:?}"))
        })?;
        let value = iter.next().ok_or_else(|| {
            Error::InvalidConfig(format!("missing value for override --{key}"))
        })?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

fn load_raw(config: Option<&PathBuf>, overrides: &[String]) -> Result<RawConfig> {
    let mut raw = match config {
        Some(path) => RawConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RawConfig::default(),
    };
    for (key, value) in parse_overrides(overrides)? {
        raw.set(&key, &value)?;
    }
    Ok(raw)
}

fn parse_theta(text: &str, d: usize) -> Result<Vec<f64>> {
    if text == "zero" {
        return Ok(vec![0.0; d]);
    }
    let theta: Vec<f64> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad theta entry {t:?}")))
        })
        .collect::<Result<_>>()?;
    Ok(theta)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            n,
            d,
            sigma2,
            theta,
            seed,
            out,
        } => {
            let theta = parse_theta(&theta, d)?;
            let digest = harness::cmd_synth(n, d, sigma2, &theta, seed, &out)?;
            println!("wrote {} ({n} rows, d={d})", out.display());
            println!("dataset digest: {digest}");
        }
        Command::Run { config, overrides } => {
            let raw = load_raw(config.as_ref(), &overrides)?;
            let out = harness::cmd_run(&raw)?;
            println!("config digest: {}", out.digest);
            println!("effective config: {}", out.effective_path.display());
            for p in &out.trace_paths {
                println!("trace: {}", p.display());
            }
            println!("total epochs per run: {:.4}", out.total_epochs);
        }
        Command::Aggregate { dir, out } => {
            let path = harness::cmd_aggregate(&dir, out.as_deref())?;
            println!("summary: {}", path.display());
        }
        Command::Validate { config, overrides } => {
            let raw = load_raw(config.as_ref(), &overrides)?;
            let report = harness::cmd_validate(&raw)?;
            print!("{report}");
            println!("validation passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if let Error::ValidationFailed(report) = &err {
                eprintln!("{report}");
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
