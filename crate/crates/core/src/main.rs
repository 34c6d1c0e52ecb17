use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};
use psotrack::cli::{run, CliError};
use psotrack::config::{load_config, Command, KEYS};

fn subcommand(cmd: Command, about: &'static str) -> clap::Command {
    let mut sub = clap::Command::new(cmd.name()).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key=value configuration file; flags override its entries"),
    );
    for key in KEYS {
        sub = sub.arg(
            Arg::new(key.name)
                .long(key.name)
                .value_name(key.value_name)
                .help(key.help)
                .allow_hyphen_values(true),
        );
    }
    sub
}

fn cli() -> clap::Command {
    clap::Command::new("psotrack")
        .about("Planar template tracking with particle swarm optimization")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true)
                .help("more log output (repeatable)"),
        )
        .subcommand(subcommand(Command::Generate, "render a synthetic sequence with ground truth"))
        .subcommand(subcommand(Command::Track, "track a template through a sequence"))
        .subcommand(subcommand(Command::Surface, "export similarity surfaces over two pose components"))
        .subcommand(subcommand(Command::Experiment, "run a measure x dof x preset x seed sweep"))
}

fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect()
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| writeln!(buf, "{}: {}", record.level(), record.args()))
        .init();
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("ERROR: {}", e.render().to_string().trim_start_matches("error: ").trim_end());
            return ExitCode::from(1);
        }
    };
    init_logging(matches.get_count("verbose"));
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let command: Command = name.parse().expect("clap only accepts known subcommands");
    let config_path = sub.get_one::<String>("config").map(PathBuf::from);
    let result = load_config(command, config_path.as_deref(), &overrides(sub))
        .map_err(CliError::from)
        .and_then(|cfg| run(&cfg));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ERROR: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
