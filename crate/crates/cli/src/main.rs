use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ergolab::run::{EXIT_OK, EXIT_VALIDATION};
use ergolab::{resolve_workers, run_path, validate_report, RunOptions};

#[derive(Parser)]
#[command(name = "ergolab", version, about = "Run multiple-ergodic-average experiments from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a config and write artifacts.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: ERGOLAB_WORKERS or all cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        no_svg: bool,
    },
    /// Check a config and report derived quantities without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, workers, no_svg } => {
            let report = run_path(&config, &RunOptions { out, workers, svg: !no_svg });
            if let Some(f) = &report.failure {
                eprintln!("error: {f}");
            }
            if let Some(dir) = &report.out_dir {
                eprintln!("artifacts in {}", dir.display());
            }
            report.exit_code
        }
        Command::Validate { config } => {
            let (valid, report) = match std::fs::read_to_string(&config) {
                Ok(text) => validate_report(&text, resolve_workers(None)),
                Err(e) => (
                    false,
                    serde_json::json!({"valid": false, "errors": [{"code": "config", "message": format!("{}: {e}", config.display())}]}),
                ),
            };
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            if valid { EXIT_OK } else { EXIT_VALIDATION }
        }
    };
    ExitCode::from(code as u8)
}
