use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hpred_cli::{bench, run, validate, BenchModes, CliError};
use hpred_core::exec::Execution;

#[derive(Parser)]
#[command(name = "hpred", version, about = "Human motion prediction, planning and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Serial,
    Parallel,
}

#[derive(Args)]
struct ExecArgs {
    /// Worker threads for parallel mode (default: all hardware threads).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

impl ExecArgs {
    fn execution(&self, default: Mode) -> Execution {
        match self.mode.unwrap_or(if self.workers.is_some() { Mode::Parallel } else { default }) {
            Mode::Serial => Execution::Serial,
            Mode::Parallel => Execution::parallel(self.workers),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode and write its artifacts.
    Run {
        /// Scenario TOML (default: the bundled two-human scenario).
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Time the predictor against the horizon, serial and parallel.
    Bench {
        /// Benchmark TOML (default: built-in configuration).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for bench.txt and bench.json (default: stdout only).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Compare the predictor with exhaustive enumeration and check beliefs.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for validation.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Convert a run directory (run log plus stacks) to CSV.
    ReplayExport {
        /// Directory written by `hpred run`.
        run_dir: PathBuf,
        #[arg(long, default_value = "out/replay")]
        out: PathBuf,
    },
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        context: format!("creating {}", dir.display()),
        source,
    })?;
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|source| CliError::Io {
        context: format!("writing {}", p.display()),
        source,
    })
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            exec,
        } => {
            let s = hpred_cli::load_scenario(scenario.as_deref())?;
            let summary = hpred_cli::cmd_run(&s, seed, &out, &exec.execution(Mode::Serial))?;
            print!("{}", run::format_summary(&summary));
        }
        Command::Bench { config, out, exec } => {
            let cfg: hpred_cli::BenchConfig = hpred_cli::load_config(config.as_deref())?;
            let modes = match exec.mode {
                None => BenchModes::default(),
                Some(Mode::Serial) => BenchModes {
                    serial: true,
                    parallel: false,
                },
                Some(Mode::Parallel) => BenchModes {
                    serial: false,
                    parallel: true,
                },
            };
            let report = hpred_cli::cmd_bench(&cfg, modes, exec.workers)?;
            let text = bench::format_report(&report);
            print!("{text}");
            if let Some(dir) = out {
                write_out(&dir, "bench.txt", &text)?;
                let json = serde_json::to_string_pretty(&report).expect("report serializes");
                write_out(&dir, "bench.json", &(json + "\n"))?;
            }
        }
        Command::Validate { config, out, exec } => {
            let cfg: hpred_cli::ValidationConfig = hpred_cli::load_config(config.as_deref())?;
            let report = hpred_cli::cmd_validate(&cfg, &exec.execution(Mode::Serial))?;
            print!("{}", validate::format_report(&report));
            if let Some(dir) = out {
                let json = serde_json::to_string_pretty(&report).expect("report serializes");
                write_out(&dir, "validation.json", &(json + "\n"))?;
            }
            if !report.pass {
                return Err(CliError::Failed("validation failed".into()));
            }
        }
        Command::ReplayExport { run_dir, out } => {
            let stacks = run_dir.join(run::STACKS);
            let summary = hpred_cli::cmd_replay_export(
                &run_dir.join(run::RUN_LOG),
                stacks.exists().then_some(stacks.as_path()),
                &out,
            )?;
            println!(
                "{} states, {} events, {} stacks ({} layers) exported to {}",
                summary.states,
                summary.events,
                summary.stacks,
                summary.layers,
                summary.out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
