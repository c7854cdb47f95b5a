use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moser_transport::cli::{run_file, EXIT_CONFIG};
use moser_transport::config::Command;

/// Regular transport-map representations of parametrised density families.
///
/// Exit codes: 0 pass, 1 configuration error, 2 failed check or detected
/// blow-up, 3 construction error.
#[derive(Parser, Debug)]
#[command(name = "moser-transport", version)]
struct Args {
    #[command(subcommand)]
    command: Option<Cmd>,

    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for the JSON report and CSV tables.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for random-map sampling; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, global = true, env = "MOSER_TRANSPORT_THREADS")]
    threads: Option<usize>,

    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Build and verify the representation.
    Represent,
    /// Check the decay assumptions against envelopes.
    CheckAssumptions,
    /// Run the Lipschitz obstruction and expectation-smoothness tests.
    Obstruct,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let Some(config) = args.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(EXIT_CONFIG as u8);
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let command = args.command.map(|c| match c {
        Cmd::Represent => Command::Represent,
        Cmd::CheckAssumptions => Command::CheckAssumptions,
        Cmd::Obstruct => Command::Obstruct,
    });
    let (outcome, plan) = run_file(
        &config,
        command,
        args.out.as_deref(),
        args.seed,
        args.verbose,
    );
    if outcome.code == EXIT_CONFIG && plan.report.is_none() {
        eprint!("{}", outcome.report);
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    if let Err(e) = outcome.write(&plan) {
        eprintln!("error: writing outputs: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    if plan.report.is_none() || args.verbose {
        print!("{}", outcome.report);
    }
    ExitCode::from(outcome.code as u8)
}
