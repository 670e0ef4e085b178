//! Seeded Gaussian random-walk traces.
//!
//! Every (trace, channel, node) triple reads from its own ChaCha stream
//! keyed off the scenario's master seed, so any trace can be regenerated
//! on its own, in any order, on any thread.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    LocalDemand = 0,
    Renewable = 1,
    Compute = 2,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::LocalDemand => "local_demand",
            Channel::Renewable => "renewable",
            Channel::Compute => "compute",
        }
    }
}

const NODE_BITS: u32 = 12;
const CHANNEL_BITS: u32 = 4;

/// ChaCha stream index for one series. Node ids must fit in 12 bits and
/// trace ids in 48.
pub fn stream_id(trace_id: u64, channel: Channel, node: usize) -> u64 {
    assert!(node < 1 << NODE_BITS, "node id {node} too large for stream layout");
    assert!(trace_id < 1 << (64 - NODE_BITS - CHANNEL_BITS), "trace id too large");
    (trace_id << (NODE_BITS + CHANNEL_BITS)) | ((channel as u64) << NODE_BITS) | node as u64
}

/// Independent generator for one series.
pub fn stream(master_seed: u64, trace_id: u64, channel: Channel, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(trace_id, channel, node));
    rng
}

/// Clamped Gaussian random walk of `steps` samples starting at `x0`.
pub fn gen_random_walk<R: Rng + ?Sized>(
    x0: f64,
    sigma: f64,
    steps: usize,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(lower <= x0 && x0 <= upper) {
        return Err(Error::Bounds { x0, lower, upper });
    }
    let mut out = Vec::with_capacity(steps);
    if steps == 0 {
        return Ok(out);
    }
    let mut x = x0;
    out.push(x);
    for _ in 1..steps {
        let eps: f64 = rng.sample(StandardNormal);
        x = (x + sigma * eps).clamp(lower, upper);
        out.push(x);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub trace_id: u64,
    /// `[node][t]`, MW.
    pub local_demand: Vec<Vec<f64>>,
    /// `[node][t]`, MW. All zero for dispatchable nodes.
    pub renewable_availability: Vec<Vec<f64>>,
    /// System-level compute arrivals per step, MW.
    pub compute_arrivals: Vec<f64>,
    pub horizon_steps: usize,
}

impl Trace {
    pub fn node_count(&self) -> usize {
        self.local_demand.len()
    }
}

/// Generate trace `trace_id` of `cfg`. Pure in `(cfg, trace_id)`.
pub fn gen_trace(cfg: &ScenarioConfig, trace_id: u64) -> Result<Trace> {
    cfg.ensure_valid()?;
    let steps = cfg.horizon_steps;
    let sigma = cfg.walk_sigma;
    let seed = cfg.master_seed;

    let mut local_demand = Vec::with_capacity(cfg.node_count());
    let mut renewable_availability = Vec::with_capacity(cfg.node_count());
    for (i, node) in cfg.nodes.iter().enumerate() {
        let mut rng = stream(seed, trace_id, Channel::LocalDemand, i);
        local_demand.push(gen_random_walk(
            cfg.initial_demand[i],
            sigma,
            steps,
            0.0,
            cfg.demand_ceiling[i],
            &mut rng,
        )?);

        if node.dispatchable {
            renewable_availability.push(vec![0.0; steps]);
        } else {
            let mut rng = stream(seed, trace_id, Channel::Renewable, i);
            renewable_availability.push(gen_random_walk(
                cfg.initial_generation[i],
                sigma,
                steps,
                0.0,
                node.energy_capacity,
                &mut rng,
            )?);
        }
    }
    let mut rng = stream(seed, trace_id, Channel::Compute, 0);
    let compute_arrivals = gen_random_walk(
        cfg.initial_compute_demand,
        sigma,
        steps,
        0.0,
        cfg.compute_arrival_ceiling,
        &mut rng,
    )?;

    Ok(Trace {
        trace_id,
        local_demand,
        renewable_availability,
        compute_arrivals,
        horizon_steps: steps,
    })
}
