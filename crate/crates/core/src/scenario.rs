//! Scenario data model and configuration loading.
//!
//! A scenario file is JSON. Every field except `nodes` may be omitted;
//! omitted values are resolved at load time so a loaded [`ScenarioConfig`]
//! is always fully explicit. Saving a config writes every resolved field,
//! which makes `load(save(cfg)) == cfg`.
//!
//! Units: power in MW, energy prices in $/MWh, carbon intensity in
//! lb CO2/kWh, time steps in minutes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat energy transport price applied between distinct nodes when a
/// scenario does not give a matrix.
pub const DEFAULT_TRANSPORT_COST: f64 = 40.0;
pub const DEFAULT_WALK_SIGMA: f64 = 5.0;
pub const DEFAULT_STEP_MINUTES: f64 = 5.0;
/// 24 h of 5 minute steps.
pub const DEFAULT_HORIZON_STEPS: usize = 288;
pub const DEFAULT_INITIAL_DEMAND: f64 = 40.0;
pub const DEFAULT_DEMAND_CEILING: f64 = 150.0;
pub const DEFAULT_THETA: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Solar,
    Wind,
    Gas,
}

impl NodeKind {
    pub fn is_dispatchable(self) -> bool {
        matches!(self, NodeKind::Gas)
    }

    fn default_carbon_intensity(self) -> f64 {
        match self {
            NodeKind::Solar => 0.1,
            NodeKind::Wind => 0.03,
            NodeKind::Gas => 0.9,
        }
    }
}

/// A grid bus with a single generator and optional co-located HPC capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    /// MW. Upper bound on renewable availability, or on dispatchable output.
    pub energy_capacity: f64,
    /// MW of HPC load the node can host.
    pub compute_capacity: f64,
    /// Marginal cost, $/MWh.
    pub energy_cost: f64,
    /// lb CO2/kWh. Reported and used for tie-breaking only.
    pub carbon_intensity: f64,
    pub dispatchable: bool,
}

/// Pairwise $/MWh for moving energy between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransportCostMatrix {
    pub cost: Vec<Vec<f64>>,
}

impl TransportCostMatrix {
    /// `value` off the diagonal, zero on it.
    pub fn uniform(n: usize, value: f64) -> Self {
        let cost = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { value }).collect())
            .collect();
        Self { cost }
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.cost[from][to]
    }

    pub fn dim(&self) -> usize {
        self.cost.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BidFormat {
    Merit,
    Plsf,
}

/// What happens to compute demand left unserved at the end of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExcessPolicy {
    #[default]
    Shed,
    Rollover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    /// Shortfall penalty, $/MWh.
    pub theta: f64,
    pub bid_format: BidFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub nodes: Vec<Node>,
    pub transport: TransportCostMatrix,
    /// Standard deviation of every random-walk increment, MW per step.
    pub walk_sigma: f64,
    pub step_minutes: f64,
    pub horizon_steps: usize,
    /// Per node, MW.
    pub initial_demand: Vec<f64>,
    /// Per node upper clamp for local demand walks, MW.
    pub demand_ceiling: Vec<f64>,
    /// Per node starting renewable availability, MW. Ignored for
    /// dispatchable nodes.
    pub initial_generation: Vec<f64>,
    /// System compute demand at t = 0, MW.
    pub initial_compute_demand: f64,
    /// Upper clamp for compute arrivals, MW.
    pub compute_arrival_ceiling: f64,
    pub master_seed: u64,
    /// `None` runs the cost-ordered placement only; `Some` sells HPC
    /// capacity through the spot market.
    pub market: Option<MarketConfig>,
    pub excess_policy: ExcessPolicy,
}

impl ScenarioConfig {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn total_compute_capacity(&self) -> f64 {
        self.nodes.iter().map(|n| n.compute_capacity).sum()
    }

    /// Step length in hours.
    pub fn step_hours(&self) -> f64 {
        self.step_minutes / 60.0
    }

    /// Lowest marginal cost among dispatchable nodes; compute is only moved
    /// along routes that are no more expensive than this.
    pub fn slack_cost(&self) -> f64 {
        self.nodes
            .iter()
            .filter(|n| n.dispatchable)
            .map(|n| n.energy_cost)
            .fold(f64::INFINITY, f64::min)
    }

    /// Resolve a scenario from nodes alone, using default values everywhere.
    pub fn from_nodes(name: impl Into<String>, nodes: Vec<Node>) -> Self {
        RawScenario {
            name: Some(name.into()),
            nodes: nodes.into_iter().map(RawNode::from).collect(),
            ..RawScenario::default()
        }
        .resolve()
    }

    /// Clone with new compute capacities, keeping every trace parameter.
    pub fn with_compute_capacities(&self, caps: &[f64]) -> Self {
        let mut cfg = self.clone();
        for (node, &cap) in cfg.nodes.iter_mut().zip(caps) {
            node.compute_capacity = cap;
        }
        cfg
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Fails with every violation found, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        let violations = validate_scenario(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(violations))
        }
    }
}

/// One failed invariant. `code` is stable and machine-readable; `path`
/// points at the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(code: &'static str, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code,
            path: path.into(),
            message: message.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawTransport {
    Matrix(Vec<Vec<f64>>),
    Uniform { default_cost: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: Option<usize>,
    kind: NodeKind,
    energy_capacity: f64,
    #[serde(default)]
    compute_capacity: f64,
    energy_cost: f64,
    carbon_intensity: Option<f64>,
    dispatchable: Option<bool>,
}

impl From<Node> for RawNode {
    fn from(n: Node) -> Self {
        Self {
            id: Some(n.id),
            kind: n.kind,
            energy_capacity: n.energy_capacity,
            compute_capacity: n.compute_capacity,
            energy_cost: n.energy_cost,
            carbon_intensity: Some(n.carbon_intensity),
            dispatchable: Some(n.dispatchable),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    nodes: Vec<RawNode>,
    transport: Option<RawTransport>,
    walk_sigma: Option<f64>,
    step_minutes: Option<f64>,
    horizon_steps: Option<usize>,
    initial_demand: Option<Vec<f64>>,
    demand_ceiling: Option<Vec<f64>>,
    initial_generation: Option<Vec<f64>>,
    initial_compute_demand: Option<f64>,
    compute_arrival_ceiling: Option<f64>,
    master_seed: Option<u64>,
    market: Option<MarketConfig>,
    excess_policy: Option<ExcessPolicy>,
}

impl RawScenario {
    fn resolve(self) -> ScenarioConfig {
        let nodes: Vec<Node> = self
            .nodes
            .into_iter()
            .enumerate()
            .map(|(i, n)| Node {
                id: n.id.unwrap_or(i),
                kind: n.kind,
                energy_capacity: n.energy_capacity,
                compute_capacity: n.compute_capacity,
                energy_cost: n.energy_cost,
                carbon_intensity: n.carbon_intensity.unwrap_or_else(|| n.kind.default_carbon_intensity()),
                dispatchable: n.dispatchable.unwrap_or_else(|| n.kind.is_dispatchable()),
            })
            .collect();
        let m = nodes.len();
        let total_compute: f64 = nodes.iter().map(|n| n.compute_capacity).sum();

        let transport = match self.transport {
            None => TransportCostMatrix::uniform(m, DEFAULT_TRANSPORT_COST),
            Some(RawTransport::Uniform { default_cost }) => TransportCostMatrix::uniform(m, default_cost),
            Some(RawTransport::Matrix(cost)) => TransportCostMatrix { cost },
        };
        let initial_generation = self.initial_generation.unwrap_or_else(|| {
            nodes
                .iter()
                .map(|n| if n.dispatchable { 0.0 } else { 0.5 * n.energy_capacity })
                .collect()
        });

        ScenarioConfig {
            name: self.name.unwrap_or_else(|| "scenario".to_string()),
            transport,
            walk_sigma: self.walk_sigma.unwrap_or(DEFAULT_WALK_SIGMA),
            step_minutes: self.step_minutes.unwrap_or(DEFAULT_STEP_MINUTES),
            horizon_steps: self.horizon_steps.unwrap_or(DEFAULT_HORIZON_STEPS),
            initial_demand: self.initial_demand.unwrap_or_else(|| vec![DEFAULT_INITIAL_DEMAND; m]),
            demand_ceiling: self.demand_ceiling.unwrap_or_else(|| vec![DEFAULT_DEMAND_CEILING; m]),
            initial_generation,
            initial_compute_demand: self.initial_compute_demand.unwrap_or(total_compute),
            compute_arrival_ceiling: self.compute_arrival_ceiling.unwrap_or(2.0 * total_compute),
            master_seed: self.master_seed.unwrap_or(0),
            market: self.market,
            excess_policy: self.excess_policy.unwrap_or_default(),
            nodes,
        }
    }
}

/// Parse scenario JSON text, apply defaults and validate.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<ScenarioConfig> {
    let raw: RawScenario = serde_json::from_str(text).map_err(|source| Error::Parse {
        path: origin.to_path_buf(),
        source,
    })?;
    let cfg = raw.resolve();
    cfg.ensure_valid()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, path)
}

/// Scenarios shipped with the crate, by name.
pub fn builtin_scenario(name: &str) -> Option<ScenarioConfig> {
    let text = match name {
        "case_a" => include_str!("../../../scenarios/case_a.json"),
        "case_b" => include_str!("../../../scenarios/case_b.json"),
        "sweep" => include_str!("../../../scenarios/sweep.json"),
        _ => return None,
    };
    Some(parse_scenario(text, Path::new(name)).expect("shipped scenario is valid"))
}

pub const BUILTIN_SCENARIOS: [&str; 3] = ["case_a", "case_b", "sweep"];

fn check_nonneg(out: &mut Vec<Violation>, code: &'static str, path: String, v: f64) {
    if !(v >= 0.0 && v.is_finite()) {
        out.push(Violation::new(code, path, format!("must be finite and >= 0, got {v}")));
    }
}

/// Every invariant violation in `cfg`; empty means valid.
pub fn validate_scenario(cfg: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let m = cfg.nodes.len();

    if m == 0 {
        out.push(Violation::new("nodes.empty", "nodes", "at least one node is required"));
    }
    for (i, n) in cfg.nodes.iter().enumerate() {
        let p = |f: &str| format!("nodes[{i}].{f}");
        if n.id != i {
            out.push(Violation::new(
                "node.id_mismatch",
                p("id"),
                format!("node ids must equal their position, expected {i} got {}", n.id),
            ));
        }
        check_nonneg(
            &mut out,
            "node.energy_capacity.negative",
            p("energy_capacity"),
            n.energy_capacity,
        );
        check_nonneg(
            &mut out,
            "node.compute_capacity.negative",
            p("compute_capacity"),
            n.compute_capacity,
        );
        check_nonneg(&mut out, "node.energy_cost.negative", p("energy_cost"), n.energy_cost);
        check_nonneg(
            &mut out,
            "node.carbon_intensity.negative",
            p("carbon_intensity"),
            n.carbon_intensity,
        );
        if n.dispatchable != n.kind.is_dispatchable() {
            out.push(Violation::new(
                "node.dispatchable_mismatch",
                p("dispatchable"),
                format!(
                    "{:?} nodes must have dispatchable = {}",
                    n.kind,
                    n.kind.is_dispatchable()
                ),
            ));
        }
    }
    if m > 0 && !cfg.nodes.iter().any(|n| n.dispatchable) {
        out.push(Violation::new(
            "slack.missing",
            "nodes",
            "at least one dispatchable node is needed as slack",
        ));
    }

    let t = &cfg.transport;
    if t.dim() != m || t.cost.iter().any(|row| row.len() != m) {
        out.push(Violation::new(
            "transport.dimension",
            "transport",
            format!("transport matrix must be {m}x{m}"),
        ));
    } else {
        if t.cost.iter().flatten().any(|&c| !(c >= 0.0 && c.is_finite())) {
            out.push(Violation::new(
                "transport.negative",
                "transport",
                "costs must be finite and >= 0",
            ));
        }
        if (0..m).any(|i| t.cost[i][i] != 0.0) {
            out.push(Violation::new(
                "transport.diagonal",
                "transport",
                "diagonal must be zero",
            ));
        }
        if (0..m).any(|i| (0..i).any(|j| t.cost[i][j] != t.cost[j][i])) {
            out.push(Violation::new(
                "transport.not_symmetric",
                "transport",
                "matrix must be symmetric",
            ));
        }
    }

    if cfg.horizon_steps == 0 {
        out.push(Violation::new(
            "horizon.empty",
            "horizon_steps",
            "horizon_steps must be >= 1",
        ));
    }
    if !(cfg.step_minutes > 0.0 && cfg.step_minutes.is_finite()) {
        out.push(Violation::new(
            "step.nonpositive",
            "step_minutes",
            "step_minutes must be > 0",
        ));
    }
    check_nonneg(&mut out, "sigma.negative", "walk_sigma".into(), cfg.walk_sigma);

    for (field, v) in [
        ("initial_demand", &cfg.initial_demand),
        ("demand_ceiling", &cfg.demand_ceiling),
        ("initial_generation", &cfg.initial_generation),
    ] {
        if v.len() != m {
            out.push(Violation::new(
                "initial.dimension",
                field,
                format!("expected {m} entries, got {}", v.len()),
            ));
        }
    }
    for (i, (&x0, &ceil)) in cfg.initial_demand.iter().zip(&cfg.demand_ceiling).enumerate() {
        if !(x0 >= 0.0 && x0 <= ceil) {
            out.push(Violation::new(
                "initial.demand.out_of_bounds",
                format!("initial_demand[{i}]"),
                format!("{x0} outside [0, {ceil}]"),
            ));
        }
    }
    for (i, (&g0, node)) in cfg.initial_generation.iter().zip(&cfg.nodes).enumerate() {
        if !node.dispatchable && !(g0 >= 0.0 && g0 <= node.energy_capacity) {
            out.push(Violation::new(
                "initial.generation.out_of_bounds",
                format!("initial_generation[{i}]"),
                format!("{g0} outside [0, {}]", node.energy_capacity),
            ));
        }
    }
    check_nonneg(
        &mut out,
        "compute_ceiling.negative",
        "compute_arrival_ceiling".into(),
        cfg.compute_arrival_ceiling,
    );
    let c0 = cfg.initial_compute_demand;
    if !(c0 >= 0.0 && c0 <= cfg.compute_arrival_ceiling) {
        out.push(Violation::new(
            "initial.compute.out_of_bounds",
            "initial_compute_demand",
            format!("{c0} outside [0, {}]", cfg.compute_arrival_ceiling),
        ));
    }
    if let Some(market) = &cfg.market {
        check_nonneg(&mut out, "market.theta.negative", "market.theta".into(), market.theta);
    }
    out
}
