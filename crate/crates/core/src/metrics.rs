//! Ensemble statistics, distribution sweeps and figure normalization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispatch::Purpose;
use crate::error::{Error, Result};
use crate::pipeline::{simulate_trace, TraceRun};
use crate::scenario::{ExcessPolicy, ScenarioConfig};
use crate::traces::Trace;

/// z for a two-sided 95% normal interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Per-trace results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceMetrics {
    pub trace_id: u64,
    /// $ per MWh delivered to any load, generation plus transport.
    pub coe: f64,
    pub curtailed_mw: f64,
    pub curtailed_mwh: f64,
    pub gas_mean: f64,
    pub gas_peak: f64,
    pub compute_served_mwh: f64,
    /// $ paid for compute: market payments, or the energy cost of placed
    /// compute without a market.
    pub total_cost: f64,
    pub arrivals_mwh: f64,
    pub shed_mwh: f64,
    pub final_queue_mw: f64,
    pub energy_cost_usd: f64,
    pub delivered_mwh: f64,
}

impl TraceMetrics {
    pub fn from_run(cfg: &ScenarioConfig, trace: &Trace, run: &TraceRun) -> Self {
        let h = cfg.step_hours();
        let steps = run.dispatch.len().max(1) as f64;
        let mut energy_cost = 0.0;
        let mut delivered = 0.0;
        let mut curtailed = 0.0;
        let mut gas_sum = 0.0;
        let mut gas_peak: f64 = 0.0;
        let mut served = 0.0;
        let mut compute_energy_cost = 0.0;
        for rec in &run.dispatch {
            energy_cost += rec.energy_cost_total;
            delivered += (rec.total_local_served() + rec.total_compute_placed()) * h;
            curtailed += rec.total_curtailed();
            gas_sum += rec.gas_output;
            gas_peak = gas_peak.max(rec.gas_output);
            served += rec.total_compute_placed() * h;
            compute_energy_cost += rec
                .flows
                .iter()
                .filter(|f| f.purpose == Purpose::Compute)
                .map(|f| f.mw * f.unit_cost() * h)
                .sum::<f64>();
        }
        let (shed, final_queue) = match cfg.excess_policy {
            ExcessPolicy::Shed => (run.dispatch.iter().map(|r| r.unserved_compute * h).sum(), 0.0),
            ExcessPolicy::Rollover => (0.0, run.dispatch.last().map_or(0.0, |r| r.unserved_compute)),
        };
        let total_cost = match &run.market {
            Some(outcomes) => outcomes.iter().map(|o| o.payment * h).sum(),
            None => compute_energy_cost,
        };
        TraceMetrics {
            trace_id: run.trace_id,
            coe: if delivered > 0.0 { energy_cost / delivered } else { 0.0 },
            curtailed_mw: curtailed / steps,
            curtailed_mwh: curtailed * h,
            gas_mean: gas_sum / steps,
            gas_peak,
            compute_served_mwh: served,
            total_cost,
            arrivals_mwh: trace.compute_arrivals.iter().sum::<f64>() * h,
            shed_mwh: shed,
            final_queue_mw: final_queue,
            energy_cost_usd: energy_cost,
            delivered_mwh: delivered,
        }
    }
}

/// Mean with a 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
}

impl Estimate {
    pub fn from_samples(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Estimate { mean: 0.0, ci95: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let ci95 = if xs.len() < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Z95 * (var / n).sqrt()
        };
        Estimate { mean, ci95 }
    }

    pub fn std_error(&self) -> f64 {
        self.ci95 / Z95
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub n_traces: usize,
    pub coe: Estimate,
    /// Mean MW of renewable energy curtailed after HPC commitments.
    pub curtailed: Estimate,
    pub curtailed_mwh: Estimate,
    pub gas_mean: Estimate,
    pub gas_peak: Estimate,
    pub compute_served: Estimate,
    pub total_cost: Estimate,
    /// Mean total cost over mean compute served; `None` when nothing served.
    pub unit_cost: Option<f64>,
}

impl MetricsSummary {
    pub fn from_traces(traces: &[TraceMetrics]) -> Self {
        let est = |f: fn(&TraceMetrics) -> f64| Estimate::from_samples(traces.iter().map(f));
        let compute_served = est(|t| t.compute_served_mwh);
        let total_cost = est(|t| t.total_cost);
        MetricsSummary {
            n_traces: traces.len(),
            coe: est(|t| t.coe),
            curtailed: est(|t| t.curtailed_mw),
            curtailed_mwh: est(|t| t.curtailed_mwh),
            gas_mean: est(|t| t.gas_mean),
            gas_peak: est(|t| t.gas_peak),
            unit_cost: (compute_served.mean > 0.0).then(|| total_cost.mean / compute_served.mean),
            compute_served,
            total_cost,
        }
    }
}

/// Ensemble-mean time series, one value per step.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MeanSeries {
    pub local_demand: Vec<f64>,
    pub gas_output: Vec<f64>,
    pub curtailed: Vec<f64>,
    pub compute_served: Vec<f64>,
    pub unserved_compute: Vec<f64>,
    /// Empty without a market.
    pub price: Vec<f64>,
}

impl MeanSeries {
    fn of_run(run: &TraceRun) -> Self {
        let d = &run.dispatch;
        MeanSeries {
            local_demand: d.iter().map(|r| r.total_local_served()).collect(),
            gas_output: d.iter().map(|r| r.gas_output).collect(),
            curtailed: d.iter().map(|r| r.total_curtailed()).collect(),
            compute_served: d.iter().map(|r| r.total_compute_placed()).collect(),
            unserved_compute: d.iter().map(|r| r.unserved_compute).collect(),
            price: run
                .market
                .as_ref()
                .map(|m| m.iter().map(|o| o.price).collect())
                .unwrap_or_default(),
        }
    }

    fn fields_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.local_demand,
            &mut self.gas_output,
            &mut self.curtailed,
            &mut self.compute_served,
            &mut self.unserved_compute,
            &mut self.price,
        ]
    }

    fn accumulate(&mut self, mut other: MeanSeries) {
        for (acc, x) in self.fields_mut().into_iter().zip(other.fields_mut()) {
            if acc.is_empty() {
                *acc = std::mem::take(x);
            } else {
                for (a, b) in acc.iter_mut().zip(x.iter()) {
                    *a += b;
                }
            }
        }
    }

    fn scale(&mut self, k: f64) {
        for v in self.fields_mut() {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub summary: MetricsSummary,
    pub traces: Vec<TraceMetrics>,
    pub series: MeanSeries,
}

/// Run traces `0..n_traces` in parallel on the current rayon pool.
pub fn run_ensemble(cfg: &ScenarioConfig, n_traces: usize) -> Result<EnsembleResult> {
    run_ensemble_with(cfg, n_traces, |_, _| ()).map(|(r, _)| r)
}

/// As [`run_ensemble`], also mapping `inspect` over every trace and its
/// run. Extras come back in trace order.
pub fn run_ensemble_with<T, F>(cfg: &ScenarioConfig, n_traces: usize, inspect: F) -> Result<(EnsembleResult, Vec<T>)>
where
    T: Send,
    F: Fn(&Trace, &TraceRun) -> T + Sync,
{
    if n_traces == 0 {
        return Err(Error::Sweep("n_traces must be >= 1".into()));
    }
    cfg.ensure_valid()?;
    let per_trace: Vec<(TraceMetrics, MeanSeries, T)> = (0..n_traces as u64)
        .into_par_iter()
        .map(|id| {
            let (trace, run) = simulate_trace(cfg, id)?;
            let m = TraceMetrics::from_run(cfg, &trace, &run);
            let s = MeanSeries::of_run(&run);
            Ok((m, s, inspect(&trace, &run)))
        })
        .collect::<Result<_>>()?;

    let mut traces = Vec::with_capacity(n_traces);
    let mut extras = Vec::with_capacity(n_traces);
    let mut series = MeanSeries::default();
    for (m, s, x) in per_trace {
        traces.push(m);
        series.accumulate(s);
        extras.push(x);
    }
    series.scale(1.0 / n_traces as f64);
    Ok((
        EnsembleResult {
            summary: MetricsSummary::from_traces(&traces),
            traces,
            series,
        },
        extras,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Base capacities plus `level` MW at every renewable node.
    Additive,
    /// `level` MW at every renewable node, the rest of the base total split
    /// across dispatchable nodes.
    ConstantTotal,
}

impl SweepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::Additive => "additive",
            SweepMode::ConstantTotal => "constant-total",
        }
    }
}

/// Compute capacities of `base` at one sweep level.
pub fn capacities_for_level(base: &ScenarioConfig, mode: SweepMode, level: f64) -> Result<Vec<f64>> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::Sweep(format!("level must be >= 0, got {level}")));
    }
    match mode {
        SweepMode::Additive => Ok(base
            .nodes
            .iter()
            .map(|n| n.compute_capacity + if n.dispatchable { 0.0 } else { level })
            .collect()),
        SweepMode::ConstantTotal => {
            let total = base.total_compute_capacity();
            let renewables = base.nodes.iter().filter(|n| !n.dispatchable).count() as f64;
            let slack = base.nodes.iter().filter(|n| n.dispatchable).count() as f64;
            let rest = total - renewables * level;
            if rest < -1e-9 {
                return Err(Error::Sweep(format!(
                    "level {level} MW at {renewables} renewable nodes exceeds total HPC capacity {total} MW"
                )));
            }
            let per_slack = rest.max(0.0) / slack;
            Ok(base
                .nodes
                .iter()
                .map(|n| if n.dispatchable { per_slack } else { level })
                .collect())
        }
    }
}

/// One ensemble per level. Trace parameters come from `base`, so every
/// level sees the same traces.
pub fn sweep_distribution(
    base: &ScenarioConfig,
    mode: SweepMode,
    levels: &[f64],
    n_traces: usize,
) -> Result<Vec<(f64, EnsembleResult)>> {
    let cfgs = levels
        .iter()
        .map(|&l| Ok((l, base.with_compute_capacities(&capacities_for_level(base, mode, l)?))))
        .collect::<Result<Vec<_>>>()?;
    cfgs.iter()
        .map(|(l, cfg)| Ok((*l, run_ensemble(cfg, n_traces)?)))
        .collect()
}

/// Divide every group by its own maximum.
pub fn normalize_by_max(groups: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max.is_nan() || max <= 0.0 {
                return Err(Error::Degenerate { group: i });
            }
            Ok(g.iter().map(|x| x / max).collect())
        })
        .collect()
}
