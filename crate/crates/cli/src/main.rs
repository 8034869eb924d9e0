use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ddenoc_cli::{run_scenario, CliError, Scenario};

#[derive(Parser)]
#[command(name = "ddenoc", version, about = "Optimal control experiments for delay systems with input-dependent delays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Output root; the scenario writes into `<out>/<name>/`.
        #[arg(long, env = "DDENOC_OUT")]
        out: Option<PathBuf>,
        /// Worker threads for parallel sections (1 gives the deterministic reference run).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "info")]
        log_level: log::LevelFilter,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Validate { scenario } => {
            let s = Scenario::load(&scenario)?;
            println!("{}: valid {} scenario `{}`", scenario.display(), s.kind.as_str(), s.name());
            Ok(true)
        }
        Command::Run { scenario, out, threads, log_level } => {
            env_logger::Builder::new().filter_level(log_level).format_timestamp(None).init();
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
            }
            let s = Scenario::load(&scenario)?;
            let root = out.or_else(|| s.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let outcome = run_scenario(&s, &root)?;
            println!("{}: {} ({} artifacts)", outcome.dir.display(), outcome.manifest.status, outcome.manifest.artifacts.len());
            Ok(outcome.success())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
