//! Spot market for HPC capacity.
//!
//! After local electrical demand is served, every node offers its HPC
//! capacity as a supply curve. A single compute consumer picks the uniform
//! price `p >= 0` minimizing
//!
//! ```text
//! f(p) = p * q(p) + theta * (d - S(p))_+,   q(p) = min(d, S(p))
//! ```
//!
//! where `S(p)` is total quantity offered at `p`. Unserved demand is either
//! shed or rolled into the next step's `d`.

use serde::Serialize;

use crate::dispatch::StepState;
use crate::scenario::{BidFormat, ExcessPolicy, MarketConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// Nothing below the marginal cost, everything at or above it.
    MeritStep,
    /// Linear ramp from zero at `p = 0` to full capacity at the marginal cost.
    PlsfRamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupplyCurve {
    pub supplier_id: usize,
    pub kind: CurveKind,
    /// $/MWh.
    pub marginal_cost: f64,
    /// MW offered this step at full price.
    pub max_capacity: f64,
}

impl SupplyCurve {
    pub fn quantity(&self, p: f64) -> f64 {
        if p < 0.0 || self.max_capacity <= 0.0 {
            return 0.0;
        }
        match self.kind {
            CurveKind::MeritStep => {
                if p >= self.marginal_cost {
                    self.max_capacity
                } else {
                    0.0
                }
            }
            CurveKind::PlsfRamp => {
                if p >= self.marginal_cost {
                    self.max_capacity
                } else {
                    self.max_capacity * p / self.marginal_cost
                }
            }
        }
    }

    /// d quantity / d price just right of `p`.
    fn slope_after(&self, p: f64) -> f64 {
        match self.kind {
            CurveKind::PlsfRamp if p < self.marginal_cost && self.max_capacity > 0.0 => {
                self.max_capacity / self.marginal_cost
            }
            _ => 0.0,
        }
    }
}

pub fn total_supply(curves: &[SupplyCurve], p: f64) -> f64 {
    curves.iter().map(|c| c.quantity(p)).sum()
}

/// One supply curve per node, built from what is left after local demand.
///
/// Renewable hosts can offer no more than their otherwise-curtailed
/// energy; dispatchable hosts offer up to their generator headroom and
/// always bid merit-order.
pub fn build_supply_curves(state: &StepState<'_>, market: &MarketConfig) -> Vec<SupplyCurve> {
    let cfg = state.config();
    cfg.nodes
        .iter()
        .enumerate()
        .map(|(n, node)| {
            let (energy, compute) = state.excess(n);
            let kind = if node.dispatchable {
                CurveKind::MeritStep
            } else {
                match market.bid_format {
                    BidFormat::Merit => CurveKind::MeritStep,
                    BidFormat::Plsf => CurveKind::PlsfRamp,
                }
            };
            SupplyCurve {
                supplier_id: n,
                kind,
                marginal_cost: node.energy_cost,
                max_capacity: energy.min(compute),
            }
        })
        .collect()
}

/// Consumer cost rate ($/h) of choosing price `p`.
pub fn eval_objective(p: f64, curves: &[SupplyCurve], d: f64, theta: f64) -> f64 {
    let supply = total_supply(curves, p);
    let bought = supply.min(d);
    p * bought + theta * (d - supply).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketOutcome {
    pub t: usize,
    /// $/MWh.
    pub price: f64,
    /// MW, including any rolled-over queue.
    pub demand: f64,
    /// MW bought from each supplier, in curve order.
    pub quantities: Vec<f64>,
    pub served: f64,
    pub shortfall: f64,
    /// Payment rate, $/h (`price * served`). Multiply by the step length
    /// in hours for dollars.
    pub payment: f64,
    pub queue_after: f64,
}

/// Prices at which the minimum of the objective can sit.
///
/// Between consecutive kinks (0, every c_i, theta) total supply is linear,
/// so the objective is linear or convex quadratic there until supply
/// reaches `d`, and increasing afterwards. Prices above theta are never
/// better than theta itself.
fn candidate_prices(curves: &[SupplyCurve], d: f64, theta: f64) -> Vec<f64> {
    let mut kinks: Vec<f64> = vec![0.0, theta];
    kinks.extend(curves.iter().map(|c| c.marginal_cost).filter(|&c| c > 0.0 && c < theta));
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();

    let mut out = kinks.clone();
    for w in kinks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let slope: f64 = curves.iter().map(|c| c.slope_after(lo)).sum();
        if slope <= 0.0 {
            continue;
        }
        let base = total_supply(curves, lo) - slope * lo;
        let reach_d = (d - base) / slope;
        let vertex = (theta * slope - base) / (2.0 * slope);
        for p in [reach_d, vertex] {
            if p > lo && p < hi {
                out.push(p);
            }
        }
    }
    out
}

/// Split `d` across offers at the chosen price: cheapest bids first,
/// pro-rata within an equal-cost tier.
fn ration(curves: &[SupplyCurve], p: f64, d: f64) -> Vec<f64> {
    let offered: Vec<f64> = curves.iter().map(|c| c.quantity(p)).collect();
    let total: f64 = offered.iter().sum();
    if total <= d {
        return offered;
    }
    let mut order: Vec<usize> = (0..curves.len()).collect();
    order.sort_by(|&a, &b| {
        curves[a]
            .marginal_cost
            .total_cmp(&curves[b].marginal_cost)
            .then(a.cmp(&b))
    });

    let mut take = vec![0.0; curves.len()];
    let mut remaining = d;
    let mut i = 0;
    while i < order.len() && remaining > 0.0 {
        let cost = curves[order[i]].marginal_cost;
        let mut j = i;
        while j < order.len() && curves[order[j]].marginal_cost == cost {
            j += 1;
        }
        let tier = &order[i..j];
        let tier_total: f64 = tier.iter().map(|&k| offered[k]).sum();
        if tier_total <= remaining {
            for &k in tier {
                take[k] = offered[k];
            }
            remaining -= tier_total;
        } else {
            for &k in tier {
                take[k] = remaining * offered[k] / tier_total;
            }
            remaining = 0.0;
        }
        i = j;
    }
    take
}

/// Exact minimizer of [`eval_objective`] over `p >= 0`.
///
/// Among equal objective values the outcome serving more load wins, then
/// the lower price.
pub fn select_price(curves: &[SupplyCurve], d: f64, theta: f64) -> (f64, MarketOutcome) {
    let d = d.max(0.0);
    let mut best: Option<(f64, f64, f64)> = None; // (objective, served, price)
    for p in candidate_prices(curves, d, theta) {
        let f = eval_objective(p, curves, d, theta);
        let served = total_supply(curves, p).min(d);
        let better = match best {
            None => true,
            Some((bf, bs, bp)) => {
                let tol = 1e-9 * bf.abs().max(1.0);
                if f < bf - tol {
                    true
                } else if f > bf + tol {
                    false
                } else if served > bs + 1e-12 {
                    true
                } else {
                    served >= bs - 1e-12 && p < bp
                }
            }
        };
        if better {
            best = Some((f, served, p));
        }
    }
    let (_, _, price) = best.expect("candidate set always contains 0");
    let quantities = ration(curves, price, d);
    let served: f64 = quantities.iter().sum();
    let outcome = MarketOutcome {
        t: 0,
        price,
        demand: d,
        served,
        shortfall: (d - served).max(0.0),
        payment: price * served,
        quantities,
        queue_after: 0.0,
    };
    (price, outcome)
}

/// Clear one step. Returns the outcome and the queue carried forward.
pub fn step_market(
    queue_in: f64,
    arrivals: f64,
    curves: &[SupplyCurve],
    theta: f64,
    policy: ExcessPolicy,
) -> (MarketOutcome, f64) {
    let d = arrivals + queue_in;
    let (_, mut outcome) = select_price(curves, d, theta);
    let queue_out = match policy {
        ExcessPolicy::Shed => 0.0,
        ExcessPolicy::Rollover => outcome.shortfall,
    };
    outcome.queue_after = queue_out;
    (outcome, queue_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn merit(id: usize, c: f64, cap: f64) -> SupplyCurve {
        SupplyCurve {
            supplier_id: id,
            kind: CurveKind::MeritStep,
            marginal_cost: c,
            max_capacity: cap,
        }
    }

    fn plsf(id: usize, c: f64, cap: f64) -> SupplyCurve {
        SupplyCurve {
            kind: CurveKind::PlsfRamp,
            ..merit(id, c, cap)
        }
    }

    fn table_curves() -> Vec<SupplyCurve> {
        vec![merit(0, 10.0, 30.0), merit(1, 20.0, 30.0), merit(2, 50.0, 100.0)]
    }

    #[test]
    fn plsf_ramp_value() {
        assert_eq!(plsf(0, 10.0, 30.0).quantity(5.0), 15.0);
        assert_eq!(plsf(0, 10.0, 30.0).quantity(12.0), 30.0);
        assert_eq!(plsf(0, 10.0, 30.0).quantity(-1.0), 0.0);
        assert_eq!(merit(0, 10.0, 30.0).quantity(9.99), 0.0);
        assert_eq!(merit(0, 10.0, 30.0).quantity(10.0), 30.0);
    }

    #[test]
    fn objective_at_breakpoints() {
        let c = table_curves();
        assert_eq!(eval_objective(10.0, &c, 50.0, 100.0), 2300.0);
        assert_eq!(eval_objective(20.0, &c, 50.0, 100.0), 1000.0);
        assert_eq!(eval_objective(50.0, &c, 50.0, 100.0), 2500.0);
    }

    #[test]
    fn zero_demand_costs_nothing() {
        let c = table_curves();
        for p in [0.0, 5.0, 20.0, 75.0] {
            assert_eq!(eval_objective(p, &c, 0.0, 100.0), 0.0);
        }
        let (p, out) = select_price(&c, 0.0, 100.0);
        assert_eq!((p, out.served, out.payment), (0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_theta_selects_free_price() {
        let (p, out) = select_price(&table_curves(), 50.0, 0.0);
        assert_eq!(p, 0.0);
        assert_eq!(eval_objective(p, &table_curves(), 50.0, 0.0), 0.0);
        assert_eq!(out.payment, 0.0);
    }

    #[test]
    fn selects_wind_price_for_table_example() {
        let (p, out) = select_price(&table_curves(), 50.0, 100.0);
        assert_eq!(p, 20.0);
        assert_eq!(out.served, 50.0);
        assert_eq!(out.payment, 1000.0);
        assert_eq!(out.shortfall, 0.0);
        assert_eq!(out.quantities, vec![30.0, 20.0, 0.0]);
    }

    #[test]
    fn low_theta_buys_only_cheap_supply() {
        let (p, out) = select_price(&table_curves(), 50.0, 12.0);
        assert!(p <= 12.0);
        assert!(out.served <= 30.0);
        assert_eq!(out.quantities[1], 0.0);
        assert_eq!(out.quantities[2], 0.0);
    }

    #[test]
    fn theta_below_gas_plus_penalty_skips_gas() {
        // 30 MW solar at 10, 100 MW gas at 50, d = 100.
        // theta 52: 10*30 + 52*70 = 3940 < 50*100, so gas is not bought.
        // theta 100: 10*30 + 100*70 = 7300 > 5000, so it is.
        let curves = vec![merit(0, 10.0, 30.0), merit(2, 50.0, 100.0)];
        let (p52, out52) = select_price(&curves, 100.0, 52.0);
        let (p100, out100) = select_price(&curves, 100.0, 100.0);
        assert_eq!((p52, out52.served), (10.0, 30.0));
        assert_eq!((p100, out100.served), (50.0, 100.0));
    }

    #[test]
    fn equal_cost_tier_is_prorated() {
        let curves = vec![merit(0, 10.0, 30.0), merit(1, 10.0, 10.0)];
        let (p, out) = select_price(&curves, 20.0, 100.0);
        assert_eq!(p, 10.0);
        assert_eq!(out.quantities, vec![15.0, 5.0]);
    }

    #[test]
    fn plsf_interior_minimum() {
        // Single ramp c=10, cap=30, d=100, theta=12: objective is
        // 3p^2 + (0 - 36)p + 1200 on [0, 10], vertex at p = 6.
        let curves = vec![plsf(0, 10.0, 30.0)];
        let (p, out) = select_price(&curves, 100.0, 12.0);
        assert!((p - 6.0).abs() < 1e-12);
        assert!((out.served - 18.0).abs() < 1e-12);
    }

    #[test]
    fn shed_and_rollover_queues() {
        let curves = vec![merit(0, 10.0, 30.0)];
        let (out, q) = step_market(0.0, 50.0, &curves, 100.0, ExcessPolicy::Shed);
        assert_eq!(out.shortfall, 20.0);
        assert_eq!(q, 0.0);
        let (out, q) = step_market(0.0, 50.0, &curves, 100.0, ExcessPolicy::Rollover);
        assert_eq!(out.shortfall, 20.0);
        assert_eq!(q, 20.0);
        let (next, _) = step_market(q, 5.0, &curves, 100.0, ExcessPolicy::Rollover);
        assert_eq!(next.demand, 25.0);
    }

    #[test]
    fn nothing_to_buy_nothing_paid() {
        let (out, q) = step_market(0.0, 0.0, &table_curves(), 100.0, ExcessPolicy::Rollover);
        assert_eq!((out.served, out.payment, q), (0.0, 0.0, 0.0));
    }

    fn curve_strategy() -> impl Strategy<Value = SupplyCurve> {
        (0.5f64..80.0, 0.0f64..100.0, any::<bool>()).prop_map(
            |(c, cap, ramp)| {
                if ramp {
                    plsf(0, c, cap)
                } else {
                    merit(0, c, cap)
                }
            },
        )
    }

    proptest! {
        #[test]
        fn quantity_is_monotone_and_bounded(curve in curve_strategy(), a in -10.0f64..120.0, b in -10.0f64..120.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(curve.quantity(lo) <= curve.quantity(hi));
            prop_assert!(curve.quantity(hi) <= curve.max_capacity);
            prop_assert!(curve.quantity(lo) >= 0.0);
        }

        #[test]
        fn ramp_dominates_step_below_cost(c in 0.5f64..80.0, cap in 0.01f64..100.0, frac in 0.001f64..0.999) {
            let p = c * frac;
            prop_assert!(plsf(0, c, cap).quantity(p) > merit(0, c, cap).quantity(p));
        }

        #[test]
        fn outcome_respects_offers(curves in prop::collection::vec(curve_strategy(), 1..5), d in 0.0f64..250.0, theta in 0.0f64..150.0) {
            let (p, out) = select_price(&curves, d, theta);
            prop_assert!(p >= 0.0 && p <= theta.max(0.0));
            prop_assert!(out.served <= d + 1e-9);
            for (q, c) in out.quantities.iter().zip(&curves) {
                prop_assert!(*q <= c.quantity(p) + 1e-9);
            }
            prop_assert!((out.served + out.shortfall - d).abs() < 1e-9);
        }
    }
}
