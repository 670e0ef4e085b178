//! Per-timestep load placement.
//!
//! Each step first serves local electrical demand (own generation first,
//! then the cheapest remaining sources with the dispatchable node as
//! slack), then places system compute load on the cheapest
//! (energy source, HPC host) routes whose delivered cost does not exceed
//! the slack generator's marginal cost. Renewable energy that is still
//! unused at the end of the step is curtailed.

use serde::Serialize;

use crate::allocation::{allocate, Sink, Source, QTY_EPS};
use crate::error::{Error, Result};
use crate::scenario::{ExcessPolicy, ScenarioConfig};
use crate::traces::Trace;

/// Routes priced within this many $/MWh of the slack cost are eligible.
const THRESHOLD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Local,
    Compute,
}

/// Energy moved from a generator at `from` to a load at `to`.
/// `from == to` for self-supply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Flow {
    pub from: usize,
    pub to: usize,
    pub mw: f64,
    pub energy_cost: f64,
    pub transport_cost: f64,
    pub purpose: Purpose,
}

impl Flow {
    pub fn unit_cost(&self) -> f64 {
        self.energy_cost + self.transport_cost
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchRecord {
    pub t: usize,
    /// Renewable availability, or dispatchable output.
    pub generation: Vec<f64>,
    pub local_served: Vec<f64>,
    pub flows: Vec<Flow>,
    /// Compute demand offered this step (arrivals plus any queue).
    pub compute_demand: f64,
    pub compute_placed: Vec<f64>,
    /// Total output of dispatchable nodes.
    pub gas_output: f64,
    pub curtailed: Vec<f64>,
    pub unserved_compute: f64,
    /// $ spent on generation plus transport during the step.
    pub energy_cost_total: f64,
}

impl DispatchRecord {
    /// Inter-node flows only.
    pub fn transfers(&self) -> impl Iterator<Item = &Flow> {
        self.flows.iter().filter(|f| f.from != f.to)
    }

    pub fn imports(&self, n: usize) -> f64 {
        self.transfers().filter(|f| f.to == n).map(|f| f.mw).sum()
    }

    pub fn exports(&self, n: usize) -> f64 {
        self.transfers().filter(|f| f.from == n).map(|f| f.mw).sum()
    }

    /// $ delivered into node `n`'s loads this step.
    pub fn cost_at(&self, n: usize, step_hours: f64) -> f64 {
        self.flows
            .iter()
            .filter(|f| f.to == n)
            .map(|f| f.mw * f.unit_cost() * step_hours)
            .sum()
    }

    pub fn total_compute_placed(&self) -> f64 {
        self.compute_placed.iter().sum()
    }

    pub fn total_curtailed(&self) -> f64 {
        self.curtailed.iter().sum()
    }

    pub fn total_local_served(&self) -> f64 {
        self.local_served.iter().sum()
    }
}

/// Generator and HPC status of one node during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub dispatchable: bool,
    pub energy_capacity: f64,
    pub compute_capacity: f64,
    /// Renewable availability this step (ignored for dispatchable nodes).
    pub available: f64,
    /// MW already committed from this node's generator.
    pub output: f64,
    pub compute_placed: f64,
}

/// Remaining `(energy, compute)` headroom of a node.
pub fn compute_excess(state: &NodeState) -> (f64, f64) {
    let ceiling = if state.dispatchable {
        state.energy_capacity
    } else {
        state.available
    };
    let energy = (ceiling - state.output).max(0.0);
    let compute = (state.compute_capacity - state.compute_placed).max(0.0);
    (energy, compute)
}

/// Mutable allocation state of one timestep.
#[derive(Debug, Clone)]
pub struct StepState<'a> {
    cfg: &'a ScenarioConfig,
    pub t: usize,
    pub nodes: Vec<NodeState>,
    pub local_demand: Vec<f64>,
    pub flows: Vec<Flow>,
}

impl<'a> StepState<'a> {
    /// Fresh state with nothing committed.
    pub fn new(cfg: &'a ScenarioConfig, t: usize, available: &[f64], local_demand: &[f64]) -> Self {
        let nodes = cfg
            .nodes
            .iter()
            .zip(available)
            .map(|(n, &available)| NodeState {
                dispatchable: n.dispatchable,
                energy_capacity: n.energy_capacity,
                compute_capacity: n.compute_capacity,
                available: if n.dispatchable { 0.0 } else { available },
                output: 0.0,
                compute_placed: 0.0,
            })
            .collect();
        Self {
            cfg,
            t,
            nodes,
            local_demand: local_demand.to_vec(),
            flows: Vec::new(),
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        self.cfg
    }

    pub fn excess(&self, n: usize) -> (f64, f64) {
        compute_excess(&self.nodes[n])
    }

    fn push_flow(&mut self, from: usize, to: usize, mw: f64, purpose: Purpose) {
        if mw <= 0.0 {
            return;
        }
        self.nodes[from].output += mw;
        if purpose == Purpose::Compute {
            self.nodes[to].compute_placed += mw;
        }
        self.flows.push(Flow {
            from,
            to,
            mw,
            energy_cost: self.cfg.nodes[from].energy_cost,
            transport_cost: self.cfg.transport.get(from, to),
            purpose,
        });
    }

    /// Sources with positive energy excess, in node order.
    fn energy_sources(&self) -> Vec<Source> {
        (0..self.nodes.len())
            .filter_map(|n| {
                let (e, _) = self.excess(n);
                (e > QTY_EPS).then(|| Source {
                    node: n,
                    capacity: e,
                    carbon: self.cfg.nodes[n].carbon_intensity,
                })
            })
            .collect()
    }

    fn route_cost(&self, from: usize, to: usize) -> f64 {
        self.cfg.nodes[from].energy_cost + self.cfg.transport.get(from, to)
    }

    /// Book `mw` of compute at node `n`, powered by that node's own
    /// generator. Used when the market has already decided placement.
    pub fn book_local_compute(&mut self, n: usize, mw: f64) {
        self.push_flow(n, n, mw, Purpose::Compute);
    }

    /// Close the step. `compute_demand` is what was offered to HPC.
    pub fn finish(self, compute_demand: f64) -> DispatchRecord {
        let step_hours = self.cfg.step_hours();
        let generation = self
            .nodes
            .iter()
            .map(|n| if n.dispatchable { n.output } else { n.available })
            .collect();
        let curtailed = self
            .nodes
            .iter()
            .map(|n| {
                if n.dispatchable {
                    0.0
                } else {
                    (n.available - n.output).max(0.0)
                }
            })
            .collect();
        let compute_placed: Vec<f64> = self.nodes.iter().map(|n| n.compute_placed).collect();
        let placed: f64 = compute_placed.iter().sum();
        let gas_output = self.nodes.iter().filter(|n| n.dispatchable).map(|n| n.output).sum();
        let energy_cost_total = self.flows.iter().map(|f| f.mw * f.unit_cost() * step_hours).sum();
        DispatchRecord {
            t: self.t,
            generation,
            local_served: self.local_demand,
            flows: self.flows,
            compute_demand,
            compute_placed,
            gas_output,
            curtailed,
            unserved_compute: (compute_demand - placed).max(0.0),
            energy_cost_total,
        }
    }
}

/// Serve every node's local demand for step `t`.
///
/// Nodes self-supply first. Remaining deficits are met from other nodes'
/// excess in ascending delivered cost, which leaves the dispatchable node
/// to cover whatever renewables cannot.
pub fn serve_local_demand<'a>(cfg: &'a ScenarioConfig, trace: &Trace, t: usize) -> Result<StepState<'a>> {
    let available: Vec<f64> = trace.renewable_availability.iter().map(|s| s[t]).collect();
    let demand: Vec<f64> = trace.local_demand.iter().map(|s| s[t]).collect();
    serve_local_demand_at(StepState::new(cfg, t, &available, &demand))
}

/// As [`serve_local_demand`], starting from an explicit fresh state.
pub fn serve_local_demand_at(mut state: StepState<'_>) -> Result<StepState<'_>> {
    let m = state.nodes.len();
    let mut deficits = Vec::new();
    for n in 0..m {
        let (own, _) = state.excess(n);
        let served = state.local_demand[n].min(own);
        state.push_flow(n, n, served, Purpose::Local);
        let deficit = state.local_demand[n] - served;
        if deficit > QTY_EPS {
            deficits.push(Sink {
                node: n,
                capacity: deficit,
            });
        }
    }
    let total_deficit: f64 = deficits.iter().map(|s| s.capacity).sum();
    if total_deficit > 0.0 {
        let sources = state.energy_sources();
        let moves = allocate(&sources, &deficits, total_deficit, |i, j| {
            Some(state.route_cost(sources[i].node, deficits[j].node))
        });
        let mut moved = 0.0;
        for a in moves {
            state.push_flow(sources[a.source].node, deficits[a.sink].node, a.mw, Purpose::Local);
            moved += a.mw;
        }
        let unmet = total_deficit - moved;
        if unmet > 1e-9 {
            return Err(Error::InfeasibleDemand { t: state.t, unmet });
        }
    }
    Ok(state)
}

/// Place up to `demand` MW of compute on the cheapest eligible routes.
/// A route is eligible when its delivered cost does not exceed the slack
/// cost. Returns MW placed; the remainder is unserved.
pub fn place_compute(state: &mut StepState<'_>, demand: f64) -> f64 {
    let threshold = state.cfg.slack_cost() + THRESHOLD_EPS;
    let sources = state.energy_sources();
    let sinks: Vec<Sink> = (0..state.nodes.len())
        .filter_map(|n| {
            let (_, c) = state.excess(n);
            (c > QTY_EPS).then_some(Sink { node: n, capacity: c })
        })
        .collect();
    let moves = allocate(&sources, &sinks, demand, |i, j| {
        let cost = state.route_cost(sources[i].node, sinks[j].node);
        (cost <= threshold).then_some(cost)
    });
    let mut placed = 0.0;
    for a in moves {
        state.push_flow(sources[a.source].node, sinks[a.sink].node, a.mw, Purpose::Compute);
        placed += a.mw;
    }
    placed
}

/// Largest absolute residual (MW) of the per-node energy balance and the
/// compute balance in `rec`.
pub fn balance_residual(rec: &DispatchRecord) -> f64 {
    let mut worst: f64 = 0.0;
    for n in 0..rec.generation.len() {
        let supply = rec.generation[n] + rec.imports(n) - rec.exports(n);
        let use_ = rec.local_served[n] + rec.compute_placed[n] + rec.curtailed[n];
        worst = worst.max((supply - use_).abs());
    }
    let compute = rec.total_compute_placed() + rec.unserved_compute - rec.compute_demand;
    worst.max(compute.abs())
}

/// Run the placement loop over a whole trace.
pub fn run_trace(cfg: &ScenarioConfig, trace: &Trace) -> Result<Vec<DispatchRecord>> {
    let mut queue = 0.0;
    let mut out = Vec::with_capacity(trace.horizon_steps);
    for t in 0..trace.horizon_steps {
        let demand = trace.compute_arrivals[t] + queue;
        let mut state = serve_local_demand(cfg, trace, t)?;
        place_compute(&mut state, demand);
        let rec = state.finish(demand);
        queue = match cfg.excess_policy {
            ExcessPolicy::Shed => 0.0,
            ExcessPolicy::Rollover => rec.unserved_compute,
        };
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_scenario;

    fn case(name: &str) -> ScenarioConfig {
        builtin_scenario(name).unwrap()
    }

    fn one_step_trace(_cfg: &ScenarioConfig, demand: [f64; 3], solar: f64, wind: f64, compute: f64) -> Trace {
        Trace {
            trace_id: 0,
            local_demand: demand.iter().map(|&d| vec![d]).collect(),
            renewable_availability: vec![vec![solar], vec![wind], vec![0.0]],
            compute_arrivals: vec![compute],
            horizon_steps: 1,
        }
    }

    fn flow(rec: &DispatchRecord, from: usize, to: usize, purpose: Purpose) -> f64 {
        rec.flows
            .iter()
            .filter(|f| f.from == from && f.to == to && f.purpose == purpose)
            .map(|f| f.mw)
            .sum()
    }

    #[test]
    fn excess_examples() {
        let solar = NodeState {
            dispatchable: false,
            energy_capacity: 100.0,
            compute_capacity: 0.0,
            available: 50.0,
            output: 20.0,
            compute_placed: 0.0,
        };
        assert_eq!(compute_excess(&solar), (30.0, 0.0));
        let gas = NodeState {
            dispatchable: true,
            energy_capacity: 500.0,
            compute_capacity: 100.0,
            available: 0.0,
            output: 30.0,
            compute_placed: 40.0,
        };
        assert_eq!(compute_excess(&gas), (470.0, 60.0));
    }

    #[test]
    fn local_demand_self_served_first() {
        let cfg = case("case_a");
        let tr = one_step_trace(&cfg, [20.0, 40.0, 30.0], 50.0, 40.0, 0.0);
        let rec = serve_local_demand(&cfg, &tr, 0).unwrap().finish(0.0);
        assert_eq!(flow(&rec, 0, 0, Purpose::Local), 20.0);
        assert_eq!(flow(&rec, 1, 1, Purpose::Local), 40.0);
        assert_eq!(rec.gas_output, 30.0);
        assert_eq!(rec.transfers().count(), 0);
        assert_eq!(rec.curtailed, vec![30.0, 0.0, 0.0]);
    }

    #[test]
    fn wind_shortfall_served_by_solar_before_gas() {
        let cfg = case("case_a");
        let tr = one_step_trace(&cfg, [20.0, 40.0, 0.0], 50.0, 0.0, 0.0);
        let rec = serve_local_demand(&cfg, &tr, 0).unwrap().finish(0.0);
        assert_eq!(flow(&rec, 0, 1, Purpose::Local), 30.0);
        assert_eq!(flow(&rec, 2, 1, Purpose::Local), 10.0);
        assert_eq!(rec.gas_output, 10.0);
        // 20*10 + 30*(10+40) + 10*(50+40) per hour
        assert!((rec.energy_cost_total - (200.0 + 1500.0 + 900.0) * cfg.step_hours()).abs() < 1e-9);
    }

    #[test]
    fn zero_demand_means_nothing_moves() {
        let cfg = case("case_a");
        let tr = one_step_trace(&cfg, [0.0; 3], 50.0, 40.0, 0.0);
        let rec = serve_local_demand(&cfg, &tr, 0).unwrap().finish(0.0);
        assert!(rec.flows.is_empty());
        assert_eq!(rec.gas_output, 0.0);
    }

    #[test]
    fn infeasible_local_demand_is_an_error() {
        let mut cfg = case("case_a");
        cfg.nodes[2].energy_capacity = 10.0;
        let tr = one_step_trace(&cfg, [0.0, 0.0, 40.0], 5.0, 5.0, 0.0);
        match serve_local_demand(&cfg, &tr, 0) {
            Err(Error::InfeasibleDemand { unmet, .. }) => assert!((unmet - 20.0).abs() < 1e-9),
            other => panic!("expected infeasible demand, got {other:?}"),
        }
    }

    #[test]
    fn case_a_compute_uses_solar_then_gas() {
        let cfg = case("case_a");
        let tr = one_step_trace(&cfg, [20.0, 40.0, 30.0], 50.0, 40.0, 50.0);
        let recs = run_trace(&cfg, &tr).unwrap();
        let rec = &recs[0];
        assert_eq!(flow(rec, 0, 2, Purpose::Compute), 30.0);
        assert_eq!(flow(rec, 2, 2, Purpose::Compute), 20.0);
        assert_eq!(rec.compute_placed, vec![0.0, 0.0, 50.0]);
        assert_eq!(rec.unserved_compute, 0.0);
        assert_eq!(rec.curtailed, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn case_b_compute_uses_local_solar() {
        let cfg = case("case_b");
        let tr = one_step_trace(&cfg, [20.0, 40.0, 30.0], 50.0, 40.0, 50.0);
        let rec = &run_trace(&cfg, &tr).unwrap()[0];
        assert_eq!(flow(rec, 0, 0, Purpose::Compute), 30.0);
        assert_eq!(flow(rec, 2, 2, Purpose::Compute), 20.0);
        assert_eq!(rec.compute_placed, vec![30.0, 0.0, 20.0]);
    }

    #[test]
    fn zero_compute_places_nothing() {
        let cfg = case("case_b");
        let tr = one_step_trace(&cfg, [20.0, 40.0, 30.0], 50.0, 40.0, 0.0);
        let rec = &run_trace(&cfg, &tr).unwrap()[0];
        assert_eq!(rec.compute_placed, vec![0.0; 3]);
        assert_eq!(rec.curtailed, vec![30.0, 0.0, 0.0]);
    }

    #[test]
    fn expensive_routes_are_left_unserved() {
        // Wind to node 3 costs 60 > slack 50 and there is no HPC at node 2.
        let mut cfg = case("case_a");
        cfg.nodes[2].compute_capacity = 10.0;
        let tr = one_step_trace(&cfg, [0.0, 0.0, 0.0], 0.0, 40.0, 30.0);
        let rec = &run_trace(&cfg, &tr).unwrap()[0];
        assert_eq!(flow(rec, 2, 2, Purpose::Compute), 10.0);
        assert_eq!(rec.unserved_compute, 20.0);
        assert_eq!(rec.curtailed[1], 40.0);
    }

    #[test]
    fn rollover_carries_unserved_compute() {
        let mut cfg = case("case_a");
        cfg.excess_policy = ExcessPolicy::Rollover;
        let tr = Trace {
            trace_id: 0,
            local_demand: vec![vec![0.0; 2]; 3],
            renewable_availability: vec![vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]],
            compute_arrivals: vec![130.0, 10.0],
            horizon_steps: 2,
        };
        let recs = run_trace(&cfg, &tr).unwrap();
        assert_eq!(recs[0].unserved_compute, 30.0);
        assert_eq!(recs[1].compute_demand, 40.0);
        assert_eq!(recs[1].unserved_compute, 0.0);
    }

    #[test]
    fn stationary_inputs_give_identical_steps() {
        let mut cfg = case("case_b");
        cfg.walk_sigma = 0.0;
        let tr = crate::traces::gen_trace(&cfg, 0).unwrap();
        let recs = run_trace(&cfg, &tr).unwrap();
        for r in &recs[1..] {
            assert_eq!(r.flows, recs[0].flows);
            assert_eq!(r.curtailed, recs[0].curtailed);
            assert_eq!(r.gas_output, recs[0].gas_output);
        }
    }
}
