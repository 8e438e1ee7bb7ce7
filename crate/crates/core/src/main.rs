use std::process::ExitCode;

use aonlab_core::harness::{
    emit, exit_code, run_immse_check, run_overlap_report, run_second_moment_report, run_sweep,
    verify::{render, run_verify, VerifyOptions},
    Settings, SweepConfig,
};
use clap::{Parser, Subcommand};

/// Monte-Carlo and exact-numerics lab for the all-or-nothing phenomenon.
#[derive(Parser)]
#[command(name = "aonlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MMSE and KL per β over a common set of trials.
    Sweep(Settings),
    /// Exact overlap tails and the rate function on the t grid.
    Overlap(Settings),
    /// Truncated second moment m_N, margins and the conditional χ² bound.
    SecondMoment(Settings),
    /// Central-difference derivative of the normalized KL against ½ − ½·MMSE.
    ImmseCheck(Settings),
    /// Fixed-seed invariant suite; exit 0 iff every check passes.
    Verify {
        #[command(flatten)]
        settings: Settings,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn run(cli: Cli) -> aonlab_core::Result<bool> {
    match cli.command {
        Command::Sweep(s) => {
            let c = SweepConfig::resolve(s)?;
            emit(&c, "sweep", &run_sweep(&c)?)?;
        }
        Command::Overlap(s) => {
            let c = SweepConfig::resolve(s)?;
            emit(&c, "overlap", &run_overlap_report(&c)?)?;
        }
        Command::SecondMoment(s) => {
            let c = SweepConfig::resolve(s)?;
            emit(&c, "second-moment", &run_second_moment_report(&c)?)?;
        }
        Command::ImmseCheck(s) => {
            let c = SweepConfig::resolve(s)?;
            emit(&c, "immse-check", &run_immse_check(&c)?)?;
        }
        Command::Verify { settings, inject_fault } => {
            let c = SweepConfig::resolve(settings)?;
            let results = aonlab_core::trial::with_threads(c.threads, || {
                run_verify(VerifyOptions { seed: c.master_seed, inject_fault })
            })??;
            print!("{}", render(&results));
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("aonlab: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
