mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime};

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{ConfigError, OUT_DIR_ENV, PRESETS};
use output::Output;

#[derive(Parser)]
#[command(name = "grl", version, about = "Batch experiments on abstractions, surrogate MDPs and action binarization")]
struct Cli {
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Run one experiment and write its CSV/JSON artifacts and manifest.
    #[command(after_help = "Parameters are given as --name value (or --name=value) and override the preset and config file.\n\
        Reserved flags: --config FILE, --preset NAME, --out DIR, --seed N, --tag NAME.\n\
        The output directory may also be set with the GRL_OUT_DIR environment variable.")]
    Run {
        /// Optional command (qlearn, surrogate, homo, binarize, bounds, vaexp, vpdp or order)
        /// followed by --name value pairs. The command may come from the config or preset instead.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "COMMAND] [--NAME VALUE")]
        args: Vec<String>,
    },
    /// List the bundled presets.
    Presets,
    /// Print a bundled preset as TOML.
    Show { name: String },
}

/// Writes to stdout, ignoring a closed pipe.
pub(crate) fn stdout(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn run(args: &[String]) -> Result<()> {
    let (command, args) = match args.split_first() {
        Some((c, rest)) if !c.starts_with("--") => (Some(c.clone()), rest),
        _ => (None, args),
    };
    let req = config::parse_args(command, args)?;
    let env_out = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    let cfg = config::resolve(req, env_out)?;
    let started = SystemTime::now();
    let clock = Instant::now();
    let mut out = Output::new(&cfg.out_dir, cfg.command.name(), cfg.tag.as_deref(), cfg.seed, &cfg.canonical)?;
    commands::dispatch(&cfg, &mut out)?;
    let manifest = out.finish(cfg.command.name(), cfg.seed, started, clock.elapsed())?;
    eprint!("{manifest}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.cmd {
        Sub::Run { args } => run(&args),
        Sub::Presets => {
            for (name, text) in PRESETS {
                let cmd = text.parse::<toml::Table>().ok().and_then(|t| t.get("command").and_then(|c| c.as_str().map(String::from)));
                stdout(&format!("{name}\t{}\n", cmd.unwrap_or_default()));
            }
            Ok(())
        }
        Sub::Show { name } => match PRESETS.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => {
                stdout(text);
                Ok(())
            }
            None => Err(ConfigError(format!("unknown preset `{name}`")).into()),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
