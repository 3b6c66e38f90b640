//! Command-line entry point: training, reconstruction, the TV baseline,
//! model export, and the verification report.

mod commands;
mod config;

use config::RunConfig;

const USAGE: &str = "\
ebmkit <command> [--key value ...]

Commands:
  train              Train a prior (--method sm|bilevel) on a directory of PGM images
  reconstruct        MAP or MMSE reconstruction (--mode map|mmse, --op identity|fourier|radon)
  baseline-tv        Smoothed anisotropic total-variation baseline
  export-potentials  Dump per-filter potentials (CSV) and kernels (PGM)
  verify             Run the finite-grid verification suite

Common flags:
  --config file.ini  Flat key = value file; explicit flags override it
  --out-dir DIR      Output directory (default .)
  --seed N           RNG seed (default 0)
  --threads N        Worker threads (default env EBMKIT_THREADS or 1)

Run `ebmkit <command> --help` for the command-specific flags.
Exit codes: 0 success, 1 verification/runtime failure, 2 usage error.";

/// How a command ended; decides the process exit code.
pub enum Outcome {
    Success,
    /// Some verification or acceptance check failed (exit 1).
    CheckFailed(String),
}

pub enum CliError {
    Usage(String),
    Run(String),
}

impl From<config::UsageError> for CliError {
    fn from(e: config::UsageError) -> Self {
        CliError::Usage(e.0)
    }
}

impl From<ebmkit::Error> for CliError {
    fn from(e: ebmkit::Error) -> Self {
        match e {
            ebmkit::Error::InvalidArgument(m) | ebmkit::Error::Format(m) => CliError::Usage(m),
            ebmkit::Error::Io(e) => CliError::Usage(e.to_string()),
            ebmkit::Error::Domain(m) | ebmkit::Error::Numeric(m) => CliError::Run(m),
        }
    }
}

pub type CmdResult = Result<Outcome, CliError>;

fn main() {
    env_logger::init();
    std::process::exit(run(&std::env::args().skip(1).collect::<Vec<_>>()));
}

fn run(args: &[String]) -> i32 {
    if args.is_empty() {
        eprintln!("{USAGE}");
        return 2;
    }
    let cmd = args[0].as_str();
    if matches!(cmd, "--help" | "-h" | "help") {
        println!("{USAGE}");
        return 0;
    }
    let rest = &args[1..];
    if rest.iter().any(|a| a == "--help" || a == "-h") {
        println!("{}", commands::help_for(cmd).unwrap_or(USAGE));
        return 0;
    }
    let cfg = match RunConfig::from_args(rest) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let threads = std::env::var("EBMKIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(1);
    let threads = match cfg.usize_or("threads", threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    ebmkit::threads::set_worker_threads(threads);
    let result = match cmd {
        "train" => commands::train::run(&cfg),
        "reconstruct" => commands::reconstruct::run(&cfg),
        "baseline-tv" => commands::baseline_tv::run(&cfg),
        "export-potentials" => commands::export::run(&cfg),
        "verify" => commands::verify::run(&cfg),
        other => {
            eprintln!("error: unknown command {other:?}; see `ebmkit --help`");
            return 2;
        }
    };
    match result {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("{msg}");
            1
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
