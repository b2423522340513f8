//! `lrxy`: transfer traces, figures of merit, sweeps, scaling fits and
//! oracle checks for the long-range extended XY chain.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use lrxy_core::sweep::ExportFormat;
use lrxy_core::StringConvention;

#[derive(Debug, Parser)]
#[command(
    name = "lrxy",
    version,
    about = "State transfer through long-range extended XY chains"
)]
struct Cli {
    /// Key-value config file (TOML syntax); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,

    #[command(flatten)]
    model: ModelFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ModelFlags {
    #[arg(long, global = true)]
    n_sites: Option<usize>,
    #[arg(long, global = true)]
    coordination: Option<usize>,
    #[arg(long, global = true)]
    falloff: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    anisotropy: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    field: Option<f64>,
    #[arg(long, global = true)]
    coupling_scale: Option<f64>,
    /// `jordan-wigner` or `pauli`.
    #[arg(long, global = true, value_parser = parse_convention)]
    string_convention: Option<StringConvention>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the `t,p,q,f` time trace as CSV.
    Trace,
    /// Extract t_q, f* and t* for one instance.
    Metrics,
    /// Evaluate the metrics over a parameter grid.
    Sweep {
        /// `csv` or `jsonl`; inferred from the output extension when omitted.
        #[arg(long, value_parser = parse_format)]
        format: Option<ExportFormat>,
        /// Directory for per-cell results; enables resuming.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Wall-clock seconds allowed per cell.
        #[arg(long)]
        cell_time_budget: Option<f64>,
    },
    /// Fit f*(N) = a exp(-b N^eta) to `N,f_star` data.
    Fit {
        /// CSV with `N` and `f_star` columns.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Hold a = 1.
        #[arg(long)]
        fix_a: bool,
        /// Report the N at which the fitted curve reaches this value.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Compare the fast fidelity with a dense simulation of the protocol.
    OracleCheck {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

fn parse_convention(s: &str) -> Result<StringConvention, String> {
    match s {
        "jordan-wigner" => Ok(StringConvention::JordanWigner),
        "pauli" => Ok(StringConvention::Pauli),
        _ => Err(format!("expected jordan-wigner or pauli, got `{s}`")),
    }
}

fn parse_format(s: &str) -> Result<ExportFormat, String> {
    s.parse().map_err(|e: lrxy_core::Error| e.to_string())
}

impl Cli {
    fn overrides(&self) -> RunConfig {
        let m = &self.model;
        let mut cfg = RunConfig {
            n_sites: m.n_sites,
            coordination: m.coordination,
            falloff: m.falloff,
            anisotropy: m.anisotropy,
            field: m.field,
            coupling_scale: m.coupling_scale,
            string_convention: m.string_convention,
            epsilon: m.epsilon,
            t_max: m.t_max,
            dt: m.dt,
            out: self.out.clone(),
            parallelism: self.parallelism,
            ..RunConfig::default()
        };
        match &self.command {
            Command::Trace | Command::Metrics => {}
            Command::Sweep {
                format,
                cache_dir,
                cell_time_budget,
            } => {
                cfg.format = *format;
                cfg.cache_dir = cache_dir.clone();
                cfg.cell_time_budget = *cell_time_budget;
            }
            Command::Fit {
                input,
                fix_a,
                target,
            } => {
                cfg.input = input.clone();
                cfg.fix_a = fix_a.then_some(true);
                cfg.target = *target;
            }
            Command::OracleCheck {
                samples,
                seed,
                tolerance,
            } => {
                cfg.samples = *samples;
                cfg.seed = *seed;
                cfg.tolerance = *tolerance;
            }
        }
        cfg
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.merge(&cli.overrides());
    let cfg = cfg.resolve();
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match cli.command {
        Command::Trace => commands::trace(&cfg),
        Command::Metrics => commands::metrics(&cfg),
        Command::Sweep { .. } => commands::sweep(&cfg),
        Command::Fit { .. } => commands::fit(&cfg),
        Command::OracleCheck { .. } => commands::oracle_check(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
