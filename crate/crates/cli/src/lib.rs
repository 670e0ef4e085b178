//! The `gridspin` command line.

pub mod args;
pub mod job;

use std::ffi::OsString;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;
use gridspin::scenario::{builtin_scenario, BUILTIN_SCENARIOS};
use gridspin::{load_scenario, validate_scenario, ScenarioConfig};

use crate::args::{Cli, Command};
use crate::job::{launch, Job, Manifest, SweepSpec};

/// A path if one exists, otherwise a built-in scenario name.
fn resolve_scenario(arg: &str) -> Result<ScenarioConfig> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(load_scenario(path)?);
    }
    match builtin_scenario(arg) {
        Some(cfg) => Ok(cfg),
        None => bail!(
            "no scenario file or built-in named {arg:?} (built-ins: {})",
            BUILTIN_SCENARIOS.join(", ")
        ),
    }
}

fn real_main(cli: Cli, command: Vec<String>) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let mut cfg = resolve_scenario(a.common.scenario_name())?;
            a.apply(&mut cfg)?;
            let job = Job {
                scenario: cfg,
                n_traces: a.common.traces,
                sweep: None,
                dumps: a.common.dump.clone(),
                charts: a.common.charts,
            };
            let dir = launch(job, &a.common.out, a.common.jobs, &command, !a.common.quiet)?;
            println!("wrote {}", dir.display());
        }
        Command::Sweep(a) => {
            let mut cfg = resolve_scenario(a.common.scenario_name())?;
            a.common.knobs.apply(&mut cfg)?;
            let spec = SweepSpec::resolve(
                &cfg,
                a.mode.into(),
                a.levels.clone(),
                a.bids.clone(),
                a.theta.clone(),
                a.policy.iter().map(|&p| p.into()).collect(),
            );
            let job = Job {
                scenario: cfg,
                n_traces: a.common.traces,
                sweep: Some(spec),
                dumps: a.common.dump.clone(),
                charts: a.common.charts,
            };
            let dir = launch(job, &a.common.out, a.common.jobs, &command, !a.common.quiet)?;
            println!("wrote {}", dir.display());
        }
        Command::Replay(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let dir = launch(manifest.job, &a.out, a.jobs, &command, !a.quiet)?;
            println!("wrote {}", dir.display());
        }
        Command::Validate { scenario } => {
            let cfg = resolve_scenario(&scenario)?;
            let violations = validate_scenario(&cfg);
            if !violations.is_empty() {
                return Err(gridspin::Error::Invalid(violations).into());
            }
            print!("{}", cfg.to_json());
        }
        Command::Scenarios => {
            for name in BUILTIN_SCENARIOS {
                println!("{name}");
            }
        }
    }
    Ok(())
}

/// Parse `args` (program name first) and run. Exit codes: 0 success, 1
/// configuration or I/O error, 2 infeasible local demand.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let command: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match real_main(cli, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<gridspin::Error>() {
                Some(gridspin::Error::InfeasibleDemand { .. }) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
