//! `evsi` command-line tool.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evsi_core::io::Manifest;
use evsi_core::Error;

use config::{parse_param, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_COMPUTATION: u8 = 3;
const EXIT_SELFTEST: u8 = 4;

/// Default output directory when `--out` is not given.
const OUTPUT_ENV: &str = "EVSI_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "evsi",
    version,
    about = "Expected value of sample information by moment matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the priors and write the PSA table with net benefits.
    Psa(Flags),
    /// EVPPI of the focal parameters by spline regression.
    Evppi(Flags),
    /// EVSI of a study design by moment matching.
    Evsi(Flags),
    /// EVSI by two-level Monte Carlo.
    Nested(Flags),
    /// Replicated benchmark experiment.
    Benchmark {
        /// table1, beta_binomial_bias, exp_gamma_bias, variance_convergence or ades_crosscheck.
        name: Option<String>,
        #[command(flatten)]
        flags: Flags,
    },
    /// Fast consistency checks over all built-in models.
    Selftest(Flags),
}

#[derive(Args, Clone, Default)]
struct Flags {
    #[arg(long)]
    model: Option<String>,
    /// Model parameter override, `key=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    #[arg(long)]
    design: Option<String>,
    /// Study sample size.
    #[arg(long = "N")]
    n: Option<u64>,
    /// PSA size.
    #[arg(long = "S")]
    s: Option<usize>,
    /// Number of quadrature points.
    #[arg(long = "Q")]
    q: Option<usize>,
    /// Retained posterior draws per quadrature point.
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated focal parameters (evppi).
    #[arg(long, value_delimiter = ',')]
    focal: Option<Vec<String>>,
    #[arg(long)]
    n_outer: Option<usize>,
    #[arg(long)]
    n_inner: Option<usize>,
    /// Wall-clock limit for nested Monte Carlo.
    #[arg(long)]
    budget_seconds: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated quadrature sizes (table1, variance_convergence).
    #[arg(long, value_delimiter = ',')]
    q_values: Option<Vec<usize>>,
    /// Comma-separated sample sizes (bias experiments).
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<u64>>,
    /// Record wall-clock times in the outputs.
    #[arg(long)]
    timings: bool,
    /// JSON configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rerun the configuration stored in a manifest (file or directory).
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Output directory (default: $EVSI_OUTPUT_DIR, then `evsi-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

impl Flags {
    fn to_config(&self, experiment: Option<String>) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            params: self.params.iter().cloned().collect::<BTreeMap<_, _>>(),
            design: self.design.clone(),
            n: self.n,
            s: self.s,
            q: self.q,
            m: self.m,
            burn_in: self.burn_in,
            seed: self.seed,
            focal: self.focal.clone(),
            n_outer: self.n_outer,
            n_inner: self.n_inner,
            budget_seconds: self.budget_seconds,
            experiment,
            replicates: self.replicates,
            q_values: self.q_values.clone(),
            n_values: self.n_values.clone(),
            timings: self.timings.then_some(true),
        }
    }
}

enum Failure {
    Error(Error),
    Selftest(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let (name, flags, experiment) = match cli.command {
        Command::Psa(f) => ("psa", f, None),
        Command::Evppi(f) => ("evppi", f, None),
        Command::Evsi(f) => ("evsi", f, None),
        Command::Nested(f) => ("nested", f, None),
        Command::Benchmark { name, flags } => ("benchmark", flags, name),
        Command::Selftest(f) => ("selftest", f, None),
    };
    if let Some(n) = flags.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
    }
    let mut cfg = RunConfig::default();
    if let Some(path) = &flags.from_manifest {
        let m = Manifest::read(path)
            .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        if m.command != name {
            return Err(
                Error::Config(format!("manifest is for `{}`, not `{name}`", m.command)).into(),
            );
        }
        cfg = RunConfig::from_value(m.config)?;
    }
    if let Some(path) = &flags.config {
        cfg = cfg.overlay(RunConfig::from_file(path)?);
    }
    let cfg = cfg.overlay(flags.to_config(experiment)).resolve(name)?;
    let out = flags
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("evsi-out"));
    fs::create_dir_all(&out).map_err(Error::from)?;
    let written = match name {
        "psa" => commands::psa(&cfg, &out),
        "evppi" => commands::evppi_cmd(&cfg, &out),
        "evsi" => commands::evsi(&cfg, &out),
        "nested" => commands::nested(&cfg, &out),
        "benchmark" => commands::benchmark(&cfg, &out),
        _ => commands::selftest(&cfg, &out),
    }?;
    let config = serde_json::to_value(&cfg).map_err(Error::from)?;
    Manifest::new(name, config, written.seeds, written.outputs).write(&out)?;
    log::info!("outputs in {}", out.display());
    if !written.failed_checks.is_empty() {
        return Err(Failure::Selftest(written.failed_checks.len()));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Selftest(n)) => {
            eprintln!("error: {n} selftest check(s) disagreed");
            ExitCode::from(EXIT_SELFTEST)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_COMPUTATION
            })
        }
    }
}
