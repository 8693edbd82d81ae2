use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::gridsim::{run, Scenario, SimError, Trace};
use crate::metrics::{usage_csv, RunReport};
use crate::time::SimDuration;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const TRACE_FILE: &str = "trace.log";
pub const USAGE_FILE: &str = "usage.csv";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "glidesim", version, about = "Deterministic glidein pool simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.log, usage.csv and report.txt.
    Run(RunArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long, required_unless_present = "report_only")]
    scenario: Option<PathBuf>,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario's horizon, e.g. 30d or 12h.
    #[arg(long)]
    until: Option<SimDuration>,
    /// Width of the usage windows in hours.
    #[arg(long, default_value_t = 720.0)]
    bucket_hours: f64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Rebuild report.txt and usage.csv from an existing trace without simulating.
    #[arg(long, value_name = "TRACE")]
    report_only: Option<PathBuf>,
}

struct Failure {
    code: i32,
    msg: String,
}

fn invalid(msg: impl ToString) -> Failure {
    Failure { code: EXIT_INVALID, msg: msg.to_string() }
}

fn runtime(msg: impl ToString) -> Failure {
    Failure { code: EXIT_RUNTIME, msg: msg.to_string() }
}

/// Entry point for the binary; returns the process exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run_command(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_report(trace: &Trace, args: &RunArgs) -> Result<RunReport, Failure> {
    let report = RunReport::from_trace(trace, args.bucket_hours).map_err(invalid)?;
    write(&args.out, USAGE_FILE, &usage_csv(&report.buckets))?;
    write(&args.out, REPORT_FILE, &report.render())?;
    Ok(report)
}

fn run_command(args: &RunArgs) -> Result<(), Failure> {
    if !(args.bucket_hours > 0.0) {
        return Err(invalid(format!("--bucket-hours must be positive, got {}", args.bucket_hours)));
    }
    if let Some(path) = &args.report_only {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let trace = Trace::parse(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        fs::create_dir_all(&args.out).map_err(|e| runtime(format!("cannot create {}: {e}", args.out.display())))?;
        let report = write_report(&trace, args)?;
        print_summary(&report, &args.out);
        return Ok(());
    }

    let path = args.scenario.as_ref().expect("clap requires --scenario here");
    let scenario = Scenario::load(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let until = args.until.unwrap_or(scenario.until).as_secs();
    if until == 0 {
        return Err(invalid("--until must be positive"));
    }
    let trace = run(&scenario, seed, until).map_err(|e| match e {
        SimError::Scenario(e) => invalid(e),
        e => runtime(e),
    })?;
    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("cannot create {}: {e}", args.out.display())))?;
    write(&args.out, TRACE_FILE, &trace.to_text())?;
    let report = write_report(&trace, args)?;
    print_summary(&report, &args.out);
    Ok(())
}

fn print_summary(r: &RunReport, out: &Path) {
    println!("scenario {} seed {} until {}s", r.scenario, r.seed, r.until);
    println!(
        "jobs {} submitted, {} completed, {} evicted",
        r.jobs_submitted, r.jobs_completed, r.jobs_evicted
    );
    println!(
        "usage {:.1} core-hours, {:.1} gpu-hours",
        r.core_seconds as f64 / 3600.0,
        r.gpu_seconds as f64 / 3600.0
    );
    println!("wrote {}", out.display());
}
