use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cosim_cli::commands::{cmd_analyze, cmd_design, cmd_simulate, CommandStatus};
use cosim_cli::config::{EnvOverrides, ScenarioFile};

/// Co-simulation laboratory for constant-delay coupling faults.
#[derive(Parser)]
#[command(name = "cosim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the coupled experiment and export trace CSVs plus a summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: [output].dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override for all randomness.
        #[arg(long)]
        seed: Option<u64>,
        /// Force the deterministic training schedule.
        #[arg(long)]
        deterministic_training: bool,
    },
    /// Emit Bode/Nyquist curves, stability verdicts and the aliasing check.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize compensator parameters against the design objective.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path) -> Result<(ScenarioFile, PathBuf), ExitCode> {
    match ScenarioFile::load(path) {
        Ok(cfg) => {
            let base = path
                .parent()
                .map(|p| p.to_path_buf())
                .unwrap_or_else(|| PathBuf::from("."));
            Ok((cfg, base))
        }
        Err(e) => {
            eprintln!("config error: {e:#}");
            Err(ExitCode::from(CommandStatus::ConfigError.exit_code() as u8))
        }
    }
}

fn finish(status: CommandStatus, summary: &str) -> ExitCode {
    print!("{summary}");
    ExitCode::from(status.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env = EnvOverrides::from_env();

    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            deterministic_training,
        } => {
            let (mut cfg, base) = match load(&config) {
                Ok(v) => v,
                Err(code) => return code,
            };
            if deterministic_training || env.deterministic_training == Some(true) {
                if let Some(t) = cfg.training.as_mut() {
                    t.deterministic = true;
                }
            }
            let seed = seed.or(env.seed).unwrap_or(cfg.seed);
            let out_dir = out
                .or(env.out.clone())
                .unwrap_or_else(|| cfg.output.dir.clone());
            match cmd_simulate(&cfg, &base, &out_dir, seed) {
                Ok(report) => finish(report.status, &report.summary),
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Analyze { config, out } => {
            let (cfg, base) = match load(&config) {
                Ok(v) => v,
                Err(code) => return code,
            };
            let out_dir = out
                .or(env.out.clone())
                .unwrap_or_else(|| cfg.output.dir.clone());
            match cmd_analyze(&cfg, &base, &out_dir) {
                Ok(report) => finish(report.status, &report.summary),
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Design { config, out, seed } => {
            let (cfg, base) = match load(&config) {
                Ok(v) => v,
                Err(code) => return code,
            };
            let _ = base;
            let seed = seed.or(env.seed).unwrap_or(cfg.seed);
            let out_dir = out
                .or(env.out.clone())
                .unwrap_or_else(|| cfg.output.dir.clone());
            match cmd_design(&cfg, &out_dir, seed) {
                Ok(report) => finish(report.status, &report.summary),
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
