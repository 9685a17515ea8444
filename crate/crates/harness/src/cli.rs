//! Argument parsing and dispatch.
//!
//! Every configuration key is also a flag: `train.max_steps` is
//! `--train-max-steps`, with the short form `--max-steps` when the part after
//! the section is unique. Flags override `--config` files.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};

use crate::commands;
use crate::config::{flag_alias, flag_name, RunConfig, KEYS};
use crate::{HarnessError, Result};

fn with_keys(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .short('c')
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("key = value file applied before the flags"),
    );
    KEYS.iter().fold(cmd, |cmd, (key, doc)| {
        let mut arg = Arg::new(*key)
            .long(flag_name(key))
            .value_name("VALUE")
            .help(format!("{key}: {doc}"))
            .help_heading("Configuration");
        if let Some(alias) = flag_alias(key) {
            arg = arg.visible_alias(alias);
        }
        cmd.arg(arg)
    })
}

pub fn command() -> Command {
    Command::new("igloo")
        .about("Train, evaluate and benchmark IGLOO sequence models")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_keys(Command::new("train").about("Train a model; writes metrics.csv, best.ckpt and final.ckpt")))
        .subcommand(
            with_keys(Command::new("eval").about("Score a checkpoint on its evaluation set")).arg(
                Arg::new("checkpoint")
                    .long("checkpoint")
                    .value_name("FILE")
                    .required(true)
                    .value_parser(clap::value_parser!(PathBuf)),
            ),
        )
        .subcommand(with_keys(
            Command::new("bench").about("Time to threshold over bench.runs seeds; writes bench.csv"),
        ))
        .subcommand(with_keys(
            Command::new("gradcheck").about("Compare analytic and finite-difference gradients (L <= 64)"),
        ))
        .subcommand(with_keys(
            Command::new("gen-data").about("Write the generated dataset, permutation or vocabulary"),
        ))
        .subcommand(Command::new("keys").about("List every configuration key with its default"))
}

fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter(|(key, _)| m.value_source(key) == Some(ValueSource::CommandLine))
        .filter_map(|(key, _)| m.get_one::<String>(key).map(|v| (key.to_string(), v.clone())))
        .collect()
}

fn resolve(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for (k, v) in overrides(m) {
        cfg.set(&k, &v)?;
    }
    Ok(cfg)
}

fn dispatch(m: &ArgMatches) -> Result<()> {
    match m.subcommand() {
        Some(("train", m)) => commands::train(&resolve(m)?).map(drop),
        Some(("eval", m)) => {
            let path = m.get_one::<PathBuf>("checkpoint").expect("required");
            let mut ov = Vec::new();
            if let Some(file) = m.get_one::<PathBuf>("config") {
                let text = std::fs::read_to_string(file).map_err(|e| HarnessError::io(file, e))?;
                let base = RunConfig::default();
                let parsed = RunConfig::parse(&text)?;
                ov.extend(
                    KEYS.iter()
                        .filter(|(k, _)| parsed.get(k) != base.get(k))
                        .map(|(k, _)| (k.to_string(), parsed.get(k).unwrap_or_default())),
                );
            }
            ov.extend(overrides(m));
            commands::eval(path, &ov).map(drop)
        }
        Some(("bench", m)) => commands::bench(&resolve(m)?).map(drop),
        Some(("gradcheck", m)) => commands::gradcheck(&resolve(m)?).map(drop),
        Some(("gen-data", m)) => commands::gen_data(&resolve(m)?).map(drop),
        Some(("keys", _)) => {
            let cfg = RunConfig::default();
            for (key, doc) in KEYS {
                println!("{key} = {}  # {doc}", cfg.get(key).unwrap_or_default());
            }
            Ok(())
        }
        _ => unreachable!("subcommand is required"),
    }
}

/// Runs the command line `args` (program name first) and returns the exit code:
/// 0 on success, 1 on usage, configuration or I/O errors, 2 when training
/// diverges and 3 when a gradient check fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
