mod commands;
mod config;
mod dataset;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use commands::CommandSpec;
use config::{flag_name, RunConfig};
use error::CliError;

fn cli(specs: &[CommandSpec]) -> Command {
    let mut root = Command::new("textkb")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Dual learning between free-text sentences and knowledge-base paths")
        .subcommand_required(true);
    for spec in specs {
        let mut cmd = Command::new(spec.name).about(spec.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value file; flags override its entries"),
        );
        for k in &spec.keys {
            let help = match k.default {
                Some("") => format!("{} [default: none]", k.help),
                Some(d) => format!("{} [default: {d}]", k.help),
                None => format!("{} [required]", k.help),
            };
            cmd = cmd.arg(Arg::new(k.name).long(&*flag_name(k.name).leak()).value_name("VALUE").help(help));
        }
        root = root.subcommand(cmd);
    }
    root
}

fn resolve(spec: &CommandSpec, m: &ArgMatches) -> Result<RunConfig, CliError> {
    let overrides: Vec<(String, String)> = spec
        .keys
        .iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(spec.name, &spec.keys, m.get_one::<PathBuf>("config").map(PathBuf::as_path), &overrides)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let specs = commands::all();
    let matches = match cli(&specs).try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.kind().to_string());
            eprint!("{}", e.render());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let spec = specs.iter().find(|s| s.name == name).expect("registered command");
    match resolve(spec, sub).and_then(|cfg| (spec.run)(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
