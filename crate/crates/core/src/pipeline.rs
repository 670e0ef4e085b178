//! One trace through the configured pipeline: placement only, or local
//! dispatch followed by the HPC market.

use crate::dispatch::{run_trace, serve_local_demand, DispatchRecord};
use crate::error::Result;
use crate::market::{build_supply_curves, step_market, MarketOutcome};
use crate::scenario::ScenarioConfig;
use crate::traces::{gen_trace, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRun {
    pub trace_id: u64,
    pub dispatch: Vec<DispatchRecord>,
    /// Present only in market mode.
    pub market: Option<Vec<MarketOutcome>>,
}

/// Market mode: the market alone decides HPC placement each step and the
/// dispatch record books the implied local energy use.
pub fn run_market_trace(cfg: &ScenarioConfig, trace: &Trace) -> Result<TraceRun> {
    let market = cfg.market.as_ref().expect("market mode requires a market config");
    let mut queue = 0.0;
    let mut dispatch = Vec::with_capacity(trace.horizon_steps);
    let mut outcomes = Vec::with_capacity(trace.horizon_steps);
    for t in 0..trace.horizon_steps {
        let mut state = serve_local_demand(cfg, trace, t)?;
        let curves = build_supply_curves(&state, market);
        let (mut outcome, q) = step_market(
            queue,
            trace.compute_arrivals[t],
            &curves,
            market.theta,
            cfg.excess_policy,
        );
        outcome.t = t;
        queue = q;
        for (curve, &mw) in curves.iter().zip(&outcome.quantities) {
            state.book_local_compute(curve.supplier_id, mw);
        }
        let mut rec = state.finish(outcome.demand);
        rec.unserved_compute = outcome.shortfall;
        dispatch.push(rec);
        outcomes.push(outcome);
    }
    Ok(TraceRun {
        trace_id: trace.trace_id,
        dispatch,
        market: Some(outcomes),
    })
}

pub fn simulate(cfg: &ScenarioConfig, trace: &Trace) -> Result<TraceRun> {
    if cfg.market.is_some() {
        run_market_trace(cfg, trace)
    } else {
        Ok(TraceRun {
            trace_id: trace.trace_id,
            dispatch: run_trace(cfg, trace)?,
            market: None,
        })
    }
}

/// Generate trace `trace_id` and run it.
pub fn simulate_trace(cfg: &ScenarioConfig, trace_id: u64) -> Result<(Trace, TraceRun)> {
    let trace = gen_trace(cfg, trace_id)?;
    let run = simulate(cfg, &trace)?;
    Ok((trace, run))
}
