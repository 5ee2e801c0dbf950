use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lleda_cli::config::ExperimentConfig;
use lleda_cli::pipeline::{run, RunError};
use lleda_cli::report::report;
use lleda_cli::MethodChoice;
use lleda_core::BufferMode;

#[derive(Parser)]
#[command(
    name = "lleda",
    version,
    about = "Lifelong self-supervised domain adaptation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BufferModeArg {
    Fill,
    Quota,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the configured methods.
    Run {
        /// TOML configuration; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<MethodChoice>,
        #[arg(long, value_enum)]
        buffer_mode: Option<BufferModeArg>,
    },
    /// Summarize a run directory and write its long-format accuracy CSV.
    Report { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            method,
            buffer_mode,
        } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::load(&path),
                None => Ok(ExperimentConfig::default()),
            };
            let mut cfg = match cfg {
                Ok(c) => c,
                Err(e) => {
                    eprint!("{e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(b) = buffer_mode {
                cfg.train.buffer_mode = match b {
                    BufferModeArg::Fill => BufferMode::Fill,
                    BufferModeArg::Quota => BufferMode::Quota,
                };
            }
            match run(&cfg) {
                Ok(outcomes) => {
                    for o in &outcomes {
                        println!(
                            "{}: average {:.4}, forgetting {:?}",
                            o.method.as_str(),
                            o.metrics.average,
                            o.metrics.forgetting
                        );
                    }
                    println!("results in {}", cfg.output_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    if let RunError::Divergence(r) = &e {
                        eprintln!("{}", serde_json::to_string(r).unwrap_or_default());
                    }
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Report { run_dir } => match report(&run_dir) {
            Ok(r) => {
                print!("{}", r.text());
                println!(
                    "long-format CSV: {}",
                    run_dir.join("accuracy_long.csv").display()
                );
                if r.is_complete() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(4)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
