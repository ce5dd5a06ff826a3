use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uavsar::cli::{self, PlanArgs, SweepParam};
use uavsar::config::MissionConfig;
use uavsar::sca::Scheme;
use uavsar::Error;

#[derive(Parser)]
#[command(name = "uavsar", version, about = "Robust UAV-SAR coverage planning")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted fields take the default parameter set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimize the trajectory and power allocation.
    Plan {
        #[arg(long)]
        reliability: Option<f64>,
        #[arg(long)]
        scheme: Option<Scheme>,
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Upper bound on the coverage for a fixed scan count.
    Bound {
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Termination gap in m^2 (default 1% of the box corner value).
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Monte-Carlo replay under trajectory deviations.
    Simulate {
        #[arg(long)]
        runs: Option<usize>,
        /// report.json written by `plan`; without it both the compensated and
        /// the uncompensated plan are made and compared.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Plan and replay every scheme.
    Bench {
        #[arg(long)]
        runs: Option<usize>,
    },
    /// One plan per parameter value.
    Sweep {
        /// p_com_max | q_start | snr_min | gs_position
        #[arg(long)]
        param: String,
        /// Comma-separated values with units, e.g. "30 dBm,35 dBm".
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    let c = &cli.common;
    if let Some(t) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("--threads: {e}")))?;
    }
    let cfg = match &c.config {
        Some(p) => MissionConfig::load(p)?,
        None => MissionConfig::default(),
    };
    match cli.cmd {
        Cmd::Plan { reliability, scheme, n_max } => {
            let a = cli::cmd_plan(&cfg, &PlanArgs { reliability, scheme, n_max }, &c.out)?;
            let r = &a.report;
            println!("scheme {} N* = {} coverage {:.3} m^2", r.scheme, r.n_star, r.objective_m2);
        }
        Cmd::Bound { n, epsilon } => {
            let r = cli::cmd_bound(&cfg, n, epsilon, &c.out)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!("N = {n} upper bound {:.3} m^2 ({:?}, {} iterations)", r.upper_bound_m2, r.status, r.iterations);
            if let (Some(s), Some(g)) = (r.sca_objective_m2, r.relative_gap) {
                println!("SCA {s:.3} m^2, gap {:.3}%", 100.0 * g);
            }
        }
        Cmd::Simulate { runs, plan } => {
            let s = cli::cmd_simulate(&cfg, plan.as_deref(), runs, c.seed, &c.out)?;
            println!("{:<10} {:>3} {:>12} {:>14} {:>14} {:>8}", "case", "N", "coverage", "missed/bound", "oracle", "excl");
            for k in &s.cases {
                println!(
                    "{:<10} {:>3} {:>12.2} {:>14.3} {:>14.3} {:>8}",
                    k.label, k.n_scans, k.coverage_m2, k.result.boundary_mean_m2.mean, k.oracle_boundary_m2, k.result.excluded_runs
                );
            }
        }
        Cmd::Bench { runs } => {
            let r = cli::cmd_bench(&cfg, runs, c.seed, &c.out)?;
            for row in &r.rows {
                println!("{:<9} {:<14} {:?} {:?}", row.scheme, row.status, row.n_star, row.coverage_m2);
            }
        }
        Cmd::Sweep { param, values } => {
            let r = cli::cmd_sweep(&cfg, SweepParam::parse(&param)?, &values, &c.out)?;
            for row in &r.rows {
                println!("{:>14.6} {:<14} {:?} {:?} {}", row.value, row.status, row.n_star, row.coverage_m2, row.binding);
            }
            if r.nondecreasing == Some(false) {
                eprintln!("warning: coverage decreased somewhere along the sweep");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors share the config-error code; clap's own code 2 means infeasible here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { cli::EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(cli::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
