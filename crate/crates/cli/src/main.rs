use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ks_cli::commands::{run, Failure, Outcome, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK};
use ks_cli::config::{Command, RunConfig};

/// Kuramoto-Sivashinsky laboratory.
///
/// Exit codes: 0 success, 1 configuration error, 2 no convergence,
/// 3 weight hypothesis violated, 4 curvature condition violated,
/// 5 pass criterion failed, 6 other runtime failure.
#[derive(Parser)]
#[command(name = "kslab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve the forward problem.
    Simulate(Args),
    /// Audit the weighted estimate over the test-function ensemble.
    CarlemanAudit(Args),
    /// Recover gamma from synthesized measurements.
    Invert(Args),
    /// Evaluate both sides of the stability estimate over a perturbation family.
    StabilityScan(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { EXIT_OK as u8 });
        }
    };
    let (cmd, args) = match cli.cmd {
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::CarlemanAudit(a) => (Command::CarlemanAudit, a),
        Sub::Invert(a) => (Command::Invert, a),
        Sub::StabilityScan(a) => (Command::StabilityScan, a),
    };
    if let Some(n) = args.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("config error: --threads: cannot start {n} worker threads");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let code = match RunConfig::load(&args.config).map_err(Failure::from).and_then(|cfg| {
        let out = args.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
        run(cmd, &cfg, &out)
    }) {
        Ok(Outcome::Success) => EXIT_OK,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            EXIT_CHECK_FAILED
        }
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
