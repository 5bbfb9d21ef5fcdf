use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use asyncfl::experiment::{parse_config, run_preset, Preset};

#[derive(Parser)]
#[command(name = "asyncfl", version, about = "Run federated edge learning experiment presets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one preset from a TOML config.
    Run {
        config: PathBuf,
        /// Preset to run; defaults to the config's `preset` key.
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        preset,
        out,
        seed,
    } = Cli::parse().command;
    let mut cfg = match parse_config(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let Some(preset) = preset.or(cfg.preset) else {
        eprintln!("error: no preset given; pass --preset or set `preset` in the config");
        return ExitCode::from(2);
    };
    match run_preset(preset, &cfg, Some(&out)) {
        Ok(outcome) => {
            for c in outcome.checks.iter().filter(|c| !c.pass) {
                eprintln!("check failed: {}", c.name);
            }
            println!("{}", out.join(preset.name()).join("summary.json").display());
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
