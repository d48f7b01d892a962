//! Command-line front end over [`crate::experiment`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::error::Result;
use crate::experiment::{cmd_calibrate_sizes, cmd_roc, cmd_run, cmd_sweep, Axis, ExperimentConfig, CONFIG_KEYS};

pub fn command() -> Command {
    let mut cmd = Command::new("acord")
        .about("Energy-budgeted continual learning for IoT fault detection")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("key = value configuration file"),
        );
    for (key, help) in CONFIG_KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .global(true)
                .action(ArgAction::Set)
                .help(*help),
        );
    }
    cmd.subcommand(Command::new("calibrate-sizes").about("Measure payload sizes and fit the size models"))
        .subcommand(Command::new("roc").about("Threshold dry run for both detectors"))
        .subcommand(Command::new("run").about("One run with per-round output"))
        .subcommand(
            Command::new("sweep").about("Sweep one axis over all policies and seeds").arg(
                Arg::new("axis")
                    .long("axis")
                    .required(true)
                    .value_parser(["energy", "bandwidth"]),
            ),
        )
}

fn config_from(matches: &ArgMatches) -> Result<ExperimentConfig> {
    let mut config = match matches.get_one::<String>("config") {
        Some(path) => ExperimentConfig::load(&PathBuf::from(path))?,
        None => ExperimentConfig::default(),
    };
    for (key, _) in CONFIG_KEYS {
        if let Some(value) = matches.get_one::<String>(key) {
            config.set(key, value)?;
        }
    }
    Ok(config)
}

/// Parses `args` (program name first), runs the command and returns a
/// short summary. Usage errors, including unknown flags, come back as
/// configuration errors.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command()
        .try_get_matches_from(args)
        .map_err(|e| crate::Error::Config(e.to_string()))?;
    execute(&matches)
}

/// Entry point for the binary: clap handles help and usage errors itself.
pub fn main() -> ExitCode {
    match execute(&command().get_matches()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn execute(matches: &ArgMatches) -> Result<String> {
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let config = config_from(sub)?;
    let mut out = String::new();
    match name {
        "calibrate-sizes" => {
            let (sizes, p_th) = cmd_calibrate_sizes(&config)?;
            for (label, m) in [("dl q8", sizes.dl_q8), ("dl q32", sizes.dl_q32), ("ul", sizes.ul)] {
                let _ = writeln!(
                    out,
                    "{label}: bits = {} * x + {} (max residual {})",
                    m.slope, m.intercept, m.residual_max
                );
            }
            let _ = writeln!(out, "p_th = {p_th}");
        }
        "roc" => {
            for s in cmd_roc(&config)? {
                let _ = writeln!(out, "{}: auc {} tau* {}", s.detector, s.auc, s.best.tau);
            }
        }
        "run" => {
            let o = cmd_run(&config)?;
            let m = &o.metrics;
            let _ = writeln!(
                out,
                "{}: recall {} e_total {} J, {} updates",
                m.policy, m.recall, m.e_total, m.rounds
            );
        }
        "sweep" => {
            let axis: Axis = sub.get_one::<String>("axis").expect("required").parse()?;
            let (_, medians) = cmd_sweep(&config, axis)?;
            for m in medians {
                let _ = writeln!(
                    out,
                    "{} e_th {} bw {} Mbps: median recall {} median e_total {}",
                    m.policy, m.e_th, m.bandwidth_mbps, m.recall, m.e_total
                );
            }
        }
        _ => unreachable!("unknown subcommand"),
    }
    let _ = write!(out, "output in {}", config.out.display());
    Ok(out)
}
