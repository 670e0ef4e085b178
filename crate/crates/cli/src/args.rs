use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridspin::metrics::SweepMode;
use gridspin::scenario::{BidFormat, ExcessPolicy, MarketConfig, TransportCostMatrix, DEFAULT_THETA};
use gridspin::ScenarioConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "gridspin", version, about = "Grid/HPC co-simulation runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an ensemble of traces for one scenario.
    Run(RunArgs),
    /// Sweep HPC capacity distribution and market settings.
    Sweep(SweepArgs),
    /// Re-run the job recorded in a manifest.
    Replay(ReplayArgs),
    /// Check a scenario and print it with defaults resolved.
    Validate {
        /// Scenario file or built-in name.
        scenario: String,
    },
    /// List built-in scenarios.
    Scenarios,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarketChoice {
    Off,
    Merit,
    Plsf,
}

impl MarketChoice {
    pub fn bid_format(self) -> Option<BidFormat> {
        match self {
            MarketChoice::Off => None,
            MarketChoice::Merit => Some(BidFormat::Merit),
            MarketChoice::Plsf => Some(BidFormat::Plsf),
        }
    }

    pub fn of(cfg: &ScenarioConfig) -> Self {
        match cfg.market.as_ref().map(|m| m.bid_format) {
            None => MarketChoice::Off,
            Some(BidFormat::Merit) => MarketChoice::Merit,
            Some(BidFormat::Plsf) => MarketChoice::Plsf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    Shed,
    Rollover,
}

impl From<Policy> for ExcessPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Shed => ExcessPolicy::Shed,
            Policy::Rollover => ExcessPolicy::Rollover,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Additive,
    ConstantTotal,
}

impl From<Mode> for SweepMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Additive => SweepMode::Additive,
            Mode::ConstantTotal => SweepMode::ConstantTotal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dump {
    Traces,
    Dispatch,
    Market,
}

/// Options shared by `run` and `sweep`.
#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file or built-in name.
    #[arg(value_name = "SCENARIO", required_unless_present = "scenario")]
    pub positional: Option<String>,

    #[arg(long, conflicts_with = "positional")]
    pub scenario: Option<String>,

    /// Traces per ensemble.
    #[arg(long, default_value_t = 100)]
    pub traces: usize,

    /// Output root; runs land in OUT/<scenario>/<timestamp>/.
    #[arg(long, env = "GRIDSPIN_OUT", default_value = "out")]
    pub out: PathBuf,

    /// Worker threads, 0 for one per core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,

    /// Also write SVG charts.
    #[arg(long)]
    pub charts: bool,

    /// Per-trace CSV dumps.
    #[arg(long, value_delimiter = ',')]
    pub dump: Vec<Dump>,

    /// Only print the output directory.
    #[arg(short, long)]
    pub quiet: bool,

    #[command(flatten)]
    pub knobs: Knobs,
}

impl Common {
    pub fn scenario_name(&self) -> &str {
        self.scenario
            .as_deref()
            .or(self.positional.as_deref())
            .expect("clap enforces a scenario")
    }
}

/// Scenario overrides. Each one replaces the value from the file.
#[derive(Debug, Args)]
pub struct Knobs {
    #[arg(long)]
    pub seed: Option<u64>,

    /// Random-walk increment standard deviation, MW.
    #[arg(long)]
    pub sigma: Option<f64>,

    #[arg(long, alias = "horizon")]
    pub horizon_steps: Option<usize>,

    #[arg(long)]
    pub step_minutes: Option<f64>,

    /// Uniform transport cost for every node pair, $/MWh.
    #[arg(long)]
    pub transport_cost: Option<f64>,

    #[arg(long)]
    pub initial_compute_demand: Option<f64>,

    #[arg(long)]
    pub compute_arrival_ceiling: Option<f64>,

    /// Per-node HPC capacity, MW, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub compute_capacity: Vec<f64>,

    /// Per-node generation capacity, MW, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub energy_capacity: Vec<f64>,
}

impl Knobs {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        let n = cfg.node_count();
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.sigma {
            cfg.walk_sigma = v;
        }
        if let Some(v) = self.horizon_steps {
            cfg.horizon_steps = v;
        }
        if let Some(v) = self.step_minutes {
            cfg.step_minutes = v;
        }
        if let Some(v) = self.transport_cost {
            cfg.transport = TransportCostMatrix::uniform(n, v);
        }
        if let Some(v) = self.initial_compute_demand {
            cfg.initial_compute_demand = v;
        }
        if let Some(v) = self.compute_arrival_ceiling {
            cfg.compute_arrival_ceiling = v;
        }
        for (name, values) in [
            ("compute-capacity", &self.compute_capacity),
            ("energy-capacity", &self.energy_capacity),
        ] {
            if !values.is_empty() && values.len() != n {
                bail!("--{name} needs {n} values, got {}", values.len());
            }
        }
        for (node, &v) in cfg.nodes.iter_mut().zip(&self.compute_capacity) {
            node.compute_capacity = v;
        }
        for (node, &v) in cfg.nodes.iter_mut().zip(&self.energy_capacity) {
            node.energy_capacity = v;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,

    /// HPC allocation: cost-ordered placement (off) or a spot market.
    #[arg(long)]
    pub market: Option<MarketChoice>,

    /// Market shortfall penalty, $/MWh.
    #[arg(long)]
    pub theta: Option<f64>,

    /// Unserved compute handling.
    #[arg(long)]
    pub policy: Option<Policy>,
}

impl RunArgs {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        self.common.knobs.apply(cfg)?;
        if let Some(choice) = self.market {
            let theta = cfg.market.as_ref().map_or(DEFAULT_THETA, |m| m.theta);
            cfg.market = choice.bid_format().map(|bid_format| MarketConfig { theta, bid_format });
        }
        if let Some(theta) = self.theta {
            match cfg.market.as_mut() {
                Some(m) => m.theta = theta,
                None => bail!("--theta needs a market; pass --market merit or --market plsf"),
            }
        }
        if let Some(p) = self.policy {
            cfg.excess_policy = p.into();
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,

    #[arg(long, value_enum, default_value = "additive")]
    pub mode: Mode,

    /// HPC MW per renewable node, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub levels: Vec<f64>,

    /// Allocation variants to sweep; defaults to the scenario's own.
    #[arg(long, alias = "market", value_delimiter = ',')]
    pub bids: Vec<MarketChoice>,

    /// Penalties to sweep for market variants.
    #[arg(long, value_delimiter = ',')]
    pub theta: Vec<f64>,

    /// Excess policies to sweep; defaults to the scenario's own.
    #[arg(long, value_delimiter = ',')]
    pub policy: Vec<Policy>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// manifest.json of an earlier run or sweep.
    pub manifest: PathBuf,

    #[arg(long, env = "GRIDSPIN_OUT", default_value = "out")]
    pub out: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub jobs: usize,

    #[arg(short, long)]
    pub quiet: bool,
}
