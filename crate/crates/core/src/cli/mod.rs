//! The `rca` command-line front end.
//!
//! Every subcommand reads an optional config file, applies `--set`
//! overrides and `--seed`, writes `effective_config` into the output
//! directory and then its own artifacts next to it. Exit codes: 0 success,
//! 1 failed acceptance checks, 2 usage or configuration errors, 3
//! numerical failures.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::csv::fmt_f64;
use crate::error::{Error, Result};
use crate::estimator::{ci_phi, profile_over_y, EstimateResult};
use crate::innovations::SeedStream;
use crate::likelihood::limit_f;
use crate::montecarlo::{
    records_from_csv, records_to_csv, run_experiment, stable_reference, summarize,
    ExperimentConfig, ExperimentKind, Summary,
};
use crate::process::{growth_diagnostics, simulate_with, SimulationOptions, Trajectory};

use config::{echo, parse_override, parse_run_config, Purpose, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "rca",
    version,
    about = "Simulate, estimate and check nonstationary random coefficient AR(1) processes",
    after_help = "Outputs (all under --out): effective_config, trajectory.csv, estimates.csv, \
profile_y.csv, limit_f.csv, surface.csv, surface_summary.csv, growth_path.csv, \
records.csv, summary.csv, verdict.txt.\n\
Exit codes: 0 success, 1 failed acceptance checks, 2 usage or config error, 3 numerical failure."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file of `section.key = value` lines; defaults apply without one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master seed; overrides `run.seed` after every `--set`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key=value` override applied after the config file (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one path (stream `run.stream`) and write trajectory.csv.
    Simulate,
    /// Estimate (φ, ω²) at the first `run.y_values` entry; writes estimates.csv.
    Estimate {
        /// Trajectory CSV with an `x` column; a fresh path is simulated without it.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Estimate at every `run.y_values` entry; writes profile_y.csv.
    ProfileY {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Tabulate the limit function f(s, x) on the surface lattice; writes limit_f.csv.
    LimitF,
    /// Likelihood surface convergence experiment; adds surface.csv and surface_summary.csv.
    Surface,
    /// Monte Carlo experiment of `experiment.kind`; writes records.csv, summary.csv, verdict.txt.
    Mc,
    /// Growth experiment; adds growth_path.csv for replication 0.
    Growth,
    /// Recompute summary.csv and verdict.txt from an existing records file.
    Report {
        #[arg(long)]
        records: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed invocation; `Ok(1)` means checks ran and at least one failed.
pub fn dispatch(cli: &Cli) -> Result<i32> {
    match cli.global.threads {
        Some(0) => Err(Error::Usage("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Usage(format!("cannot build a {t}-thread pool: {e}")))?
            .install(|| run(cli)),
        None => run(cli),
    }
}

fn run(cli: &Cli) -> Result<i32> {
    let (purpose, implied) = match &cli.command {
        Command::Simulate | Command::LimitF => (Purpose::Simulation, None),
        Command::Estimate { .. } | Command::ProfileY { .. } => (Purpose::Estimation, None),
        Command::Surface => (Purpose::Experiment, Some(ExperimentKind::LikelihoodSurface)),
        Command::Growth => (Purpose::Experiment, Some(ExperimentKind::Growth)),
        Command::Mc | Command::Report { .. } => (Purpose::Experiment, None),
    };
    let run = load(&cli.global, purpose, implied)?;
    let out = &cli.global.out;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    write(out, "effective_config", &echo(&run))?;
    let cfg = &run.experiment;

    match &cli.command {
        Command::Simulate => {
            let traj = simulate_one(&run)?;
            write(out, "trajectory.csv", &traj.to_csv())?;
            Ok(0)
        }
        Command::Estimate { input } => {
            let traj = observed_or_simulated(&run, input.as_deref())?;
            let est = profile_over_y(&traj, &cfg.region, &cfg.y_values[..1], &cfg.estimator)?;
            write(out, "estimates.csv", &estimates_csv(&est, cfg.ci_level)?)?;
            Ok(0)
        }
        Command::ProfileY { input } => {
            let traj = observed_or_simulated(&run, input.as_deref())?;
            let est = profile_over_y(&traj, &cfg.region, &cfg.y_values, &cfg.estimator)?;
            write(out, "profile_y.csv", &estimates_csv(&est, cfg.ci_level)?)?;
            Ok(0)
        }
        Command::LimitF => {
            write(out, "limit_f.csv", &limit_f_csv(cfg)?)?;
            Ok(0)
        }
        Command::Surface | Command::Growth | Command::Mc => experiment(cfg, out),
        Command::Report { records } => {
            let text = fs::read_to_string(records).map_err(|e| io_error(records, e))?;
            let records = records_from_csv(&text)?;
            let reference = match cfg.kind {
                ExperimentKind::StableLimit => Some(stable_reference(cfg)?),
                _ => None,
            };
            let summary = summarize(cfg, &records, reference.as_deref())?;
            Ok(write_verdict(out, &summary)?)
        }
    }
}

fn load(
    global: &GlobalArgs,
    purpose: Purpose,
    implied: Option<ExperimentKind>,
) -> Result<RunConfig> {
    let text = match &global.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read config file {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut overrides = global
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(seed) = global.seed {
        overrides.push(("run.seed".into(), seed.to_string()));
    }
    parse_run_config(&text, &overrides, purpose, implied)
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write(out: &Path, name: &str, content: &str) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, content).map_err(|e| io_error(&path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn simulate_one(run: &RunConfig) -> Result<Trajectory> {
    let cfg = &run.experiment;
    simulate_with(
        cfg.params,
        &cfg.spec,
        cfg.n,
        SeedStream::new(cfg.master_seed, run.stream),
        SimulationOptions {
            record_innovations: true,
            scaled_channel: true,
        },
    )
}

fn observed_or_simulated(run: &RunConfig, input: Option<&Path>) -> Result<Trajectory> {
    match input {
        None => simulate_one(run),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            read_observations(&text).map(Trajectory::from_observations)
        }
    }
}

/// The `x` column of a CSV with a header line.
pub fn read_observations(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Usage("observation file is empty".into()))?;
    let col = header
        .split(',')
        .position(|h| h.trim() == "x")
        .ok_or_else(|| Error::Usage("observation file needs an `x` column".into()))?;
    lines
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .nth(col)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::Usage(format!("observation file line {}: no numeric x", i + 2))
                })
        })
        .collect()
}

fn estimates_csv(results: &[EstimateResult], level: f64) -> Result<String> {
    let mut out = format!(
        "{},ci_lo,ci_hi,boundary_warning\n",
        EstimateResult::CSV_HEADER
    );
    for r in results {
        let ci = ci_phi(r, r.n, level)?;
        writeln!(
            out,
            "{},{},{},{}",
            r.csv_row(),
            fmt_f64(ci.lo),
            fmt_f64(ci.hi),
            ci.boundary_warning
        )
        .expect("writing to a String");
    }
    Ok(out)
}

fn limit_f_csv(cfg: &ExperimentConfig) -> Result<String> {
    let (phi, omega_sq) = cfg.truth();
    let lattice = &cfg.surface;
    let mut out = String::from("s,x,f\n");
    let py = lattice.points[2];
    for &(s, x, _) in lattice.nodes().iter().step_by(py) {
        let f = limit_f(s, x, phi, omega_sq)?;
        writeln!(out, "{},{},{}", fmt_f64(s), fmt_f64(x), fmt_f64(f)).expect("writing to a String");
    }
    Ok(out)
}

fn growth_path_csv(cfg: &ExperimentConfig) -> Result<String> {
    let traj = simulate_with(
        cfg.params,
        &cfg.spec,
        cfg.n,
        cfg.stream(0),
        SimulationOptions {
            record_innovations: true,
            scaled_channel: true,
        },
    )?;
    let g = growth_diagnostics(&traj)?;
    let mut out = String::from("k,log_abs_x,s,gamma,normalized\n");
    for k in 0..=traj.n() {
        writeln!(
            out,
            "{k},{},{},{},{}",
            fmt_f64(traj.ln_abs(k)),
            fmt_f64(g.s[k]),
            g.gamma[k],
            fmt_f64(g.normalized[k])
        )
        .expect("writing to a String");
    }
    Ok(out)
}

fn experiment(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let report = run_experiment(cfg)?;
    write(out, "records.csv", &records_to_csv(&report.records))?;
    if let Some(scan) = &report.surface {
        write(out, "surface.csv", &scan.rows_csv())?;
        write(out, "surface_summary.csv", &scan.medians_csv())?;
    }
    if cfg.kind == ExperimentKind::Growth {
        write(out, "growth_path.csv", &growth_path_csv(cfg)?)?;
    }
    eprintln!(
        "{} replications of {} in {:.1}s (Lyapunov exponent {:.4})",
        cfg.reps,
        cfg.kind,
        report.wall_time.as_secs_f64(),
        report.lyapunov
    );
    write_verdict(out, &report.summary)
}

fn write_verdict(out: &Path, summary: &Summary) -> Result<i32> {
    write(out, "summary.csv", &summary.to_csv())?;
    let verdict = summary.verdict_text();
    write(out, "verdict.txt", &verdict)?;
    print!("{verdict}");
    Ok(if summary.passed() { 0 } else { 1 })
}
