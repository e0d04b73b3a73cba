use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use varflow_cli::runner::{run, verify, Options, EXIT_CONFIG, EXIT_FAILURE};

#[derive(Parser)]
#[command(
    name = "varflow",
    version,
    about = "Run and validate variable-exponent flow scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides the scenario's `output`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Seed for all sampling (overrides the scenario's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write ledgers, tables, checkpoints and a manifest.
    Run { config: PathBuf },
    /// Validate a scenario without time stepping.
    Verify { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_FAILURE as u8);
        }
    }
    match cli.command {
        Command::Run { config } => match run(
            &config,
            &Options {
                output: cli.output,
                seed: cli.seed,
            },
        ) {
            Ok(dir) => {
                println!("all checks passed; artifacts in {}", dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Verify { config } => match verify(&config, cli.seed) {
            Ok(lines) => {
                for l in &lines {
                    println!("{l}");
                }
                if lines.iter().all(|l| l.pass) {
                    println!("PASS");
                    ExitCode::SUCCESS
                } else {
                    println!("FAIL");
                    ExitCode::from(EXIT_FAILURE as u8)
                }
            }
            Err(e) => {
                eprintln!("error: invalid scenario: {e}");
                ExitCode::from(EXIT_CONFIG as u8)
            }
        },
    }
}
