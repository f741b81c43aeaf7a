//! `grassopt` — experiment runner for subspace optimization of Gaussian
//! image discrimination.
//!
//! Exit codes: 0 success, 1 I/O or file-format failure, 2 configuration
//! error, 3 numerical failure, 4 rate check failed its acceptance band.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grassopt::config::{load_config, ExperimentConfig};
use grassopt::error::Error;
use grassopt::experiment;

#[derive(Parser)]
#[command(name = "grassopt", version, about = "Grassmann-manifold inexact-gradient optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config JSON: a full object or {"preset": "<name>", ...}
    /// with top-level overrides.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's out_dir, then ".".
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (the GRASSOPT_THREADS environment variable overrides
    /// this flag).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate Gaussian image datasets (GRMX + JSON sidecars).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write an 8-bit PGM preview of each dataset's first image.
        #[arg(long)]
        pgm: bool,
    },
    /// Tabulate covariance-estimation error against sample size.
    Covtable {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured optimizer; writes per-seed traces and final points.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Emit wall-clock nanoseconds in trace CSVs (makes reruns differ).
        #[arg(long)]
        timing: bool,
    },
    /// Score a saved subspace point on a fresh shared test set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Final-point .grmx file produced by `optimize` under the same config.
        #[arg(long)]
        point: PathBuf,
    },
    /// Convergence-rate slope check with controlled gradient error.
    Ratecheck {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn prepare(common: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let threads = std::env::var("GRASSOPT_THREADS")
        .ok()
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("GRASSOPT_THREADS must be an integer, got '{v}'")))
        })
        .transpose()?
        .or(common.threads);
    if let Some(k) = threads {
        if k == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        // Ignore the error if a global pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }

    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    cfg.validate()?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Simulate { common, pgm } => {
            let (cfg, out) = prepare(&common)?;
            let outcome = experiment::cmd_simulate(&cfg, &out, pgm)?;
            println!(
                "wrote {} files to {} (config {})",
                outcome.files.len(),
                out.display(),
                &outcome.config_hash[..12]
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Covtable { common } => {
            let (cfg, out) = prepare(&common)?;
            let table = experiment::cmd_covtable(&cfg, &out)?;
            println!("n_samples  k1_err (mean ± std)      k2_err (mean ± std)");
            for row in &table.rows {
                println!(
                    "{:>9}  {:>10.4} ± {:<10.4}  {:>10.4} ± {:<10.4}",
                    row.n_samples, row.k1_err_mean, row.k1_err_std, row.k2_err_mean, row.k2_err_std
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Optimize { common, timing } => {
            let (cfg, out) = prepare(&common)?;
            let outcome = experiment::cmd_optimize(&cfg, &out, timing)?;
            if let Some(j_star) = outcome.j_star {
                println!("analytic optimum J* = {j_star:.6}");
            }
            for run in &outcome.runs {
                println!(
                    "seed {:>3}: final J = {:.6}, grad norm = {:.3e}, iterations = {}",
                    run.seed,
                    run.j_final,
                    run.grad_norm_final,
                    run.trace.records.len()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { common, point } => {
            let (cfg, out) = prepare(&common)?;
            let report = experiment::cmd_evaluate(&point, &cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Ratecheck { common } => {
            let (cfg, out) = prepare(&common)?;
            let report = experiment::cmd_ratecheck(&cfg, &out)?;
            for case in &report.cases {
                println!(
                    "{:<32} median slope {:+.3} band [{:+.1}, {:+.1}] {}{}",
                    case.name,
                    case.median_slope,
                    case.band.0,
                    case.band.1,
                    if case.passed { "ok" } else { "FAIL" },
                    if case.gated { "" } else { " (informational)" },
                );
            }
            if report.pass {
                println!("ratecheck: pass");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("ratecheck: FAIL");
                Ok(ExitCode::from(4))
            }
        }
    }
}
