//! `biam`: synthesize data, train, evaluate, predict, export attention
//! heatmaps and run the self-checks.
//!
//! Settings come from built-in defaults, then an optional flat JSON file
//! (`--config FILE`), then `--key=value` (or `--key value`) flags for any
//! config key. Flags win.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::error::{config_err, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "biam", version, about = "Region-level multi-label zero-shot classification")]
#[command(after_help = "Any config key can be given as --key=value after the subcommand, e.g.\n  \
    biam train --manifest=data/manifest.json --out=run --epochs=80\n\
    The seed falls back to the BIAM_SEED environment variable.")]
struct Cli {
    /// Flat JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-image work (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Leave wall-clock fields out of logs so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic_log: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write a synthetic dataset with planted class patterns to --out.
    Synth,
    /// Train on the seen classes of the train split.
    Train,
    /// Score a split and write an mAP / F1@K report.
    Eval,
    /// Write the top-K labels per image as JSON.
    Predict,
    /// Export class response maps as PGM heatmaps.
    Attend,
    /// Gradient checks, forward oracle and metric oracles in 64-bit.
    Verify,
}

const CLAP_VALUED: &[&str] = &["config", "threads"];
const CLAP_SWITCHES: &[&str] = &["deterministic-log", "help", "version"];

/// Splits argv into what clap parses and `(key, value)` config overrides.
fn split_args(args: Vec<String>) -> CliResult<(Vec<String>, Vec<(String, String)>)> {
    let keys = config::known_keys();
    let mut clap_args = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    if let Some(bin) = it.next() {
        clap_args.push(bin);
    }
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| !f.is_empty()) else {
            clap_args.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if CLAP_VALUED.contains(&name.as_str()) || CLAP_SWITCHES.contains(&name.as_str()) {
            clap_args.push(arg.clone());
            if inline.is_none() && CLAP_VALUED.contains(&name.as_str()) {
                clap_args.extend(it.next());
            }
            continue;
        }
        let key = name.replace('-', "_");
        if !keys.contains(&key) {
            return Err(config_err(format!("unknown option --{name}")));
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| config_err(format!("--{name} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((clap_args, overrides))
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> CliResult<()> {
    let config = config::resolve(cli.config.as_deref(), &overrides)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_err("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_err(e.to_string()))?;
    }
    let ctx = Context {
        config,
        deterministic_log: cli.deterministic_log,
    };
    match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Predict => commands::predict(&ctx),
        Command::Attend => commands::attend(&ctx),
        Command::Verify => commands::verify(&ctx),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("biam: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let (clap_args, overrides) = match split_args(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(clap_args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn overrides_are_split_from_clap_flags() {
        let (c, o) = split_args(argv("biam train --config c.json --epochs=3 --out run --threads=2 --deterministic-log")).unwrap();
        assert_eq!(c, argv("biam train --config c.json --threads=2 --deterministic-log"));
        assert_eq!(o, vec![("epochs".into(), "3".into()), ("out".into(), "run".into())]);
        let (_, o) = split_args(argv("biam train --batch-size=4")).unwrap();
        assert_eq!(o, vec![("batch_size".into(), "4".into())]);
    }

    #[test]
    fn unknown_flags_are_config_errors() {
        let e = split_args(argv("biam train --epoch=3")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(split_args(argv("biam train --out")).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
