//! Fine-grid price search over the consumer objective.

use gridspin::market::{CurveKind, SupplyCurve};
use rand::Rng;

/// Grid spacing, $/MWh.
pub const GRID_STEP: f64 = 0.01;

/// Offered MW at price `p`, straight from the bid definitions.
pub fn offered(curve: &SupplyCurve, p: f64) -> f64 {
    let full = curve.max_capacity;
    match curve.kind {
        CurveKind::MeritStep if p >= curve.marginal_cost => full,
        CurveKind::MeritStep => 0.0,
        CurveKind::PlsfRamp if p >= curve.marginal_cost => full,
        CurveKind::PlsfRamp => full * p / curve.marginal_cost,
    }
}

/// Consumer cost rate of posting price `p`.
pub fn objective(curves: &[SupplyCurve], d: f64, theta: f64, p: f64) -> f64 {
    let s: f64 = curves.iter().map(|c| offered(c, p)).sum();
    p * s.min(d) + theta * (d - s).max(0.0)
}

/// Best `(price, objective)` over `0, step, 2 step, ...` up to and
/// including `theta`.
pub fn grid_minimum(curves: &[SupplyCurve], d: f64, theta: f64, step: f64) -> (f64, f64) {
    let n = (theta / step).floor() as usize;
    let mut best = (0.0, objective(curves, d, theta, 0.0));
    let candidates = (1..=n).map(|k| k as f64 * step).chain(std::iter::once(theta));
    for p in candidates {
        let f = objective(curves, d, theta, p);
        if f < best.1 {
            best = (p, f);
        }
    }
    best
}

/// A market instance: one to four suppliers of either bid kind.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    pub curves: Vec<SupplyCurve>,
    pub demand: f64,
    pub theta: f64,
}

impl MarketInstance {
    /// Costs are whole dollars half the time so kinks land on the grid.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let n = rng.random_range(1..=4);
        let curves = (0..n)
            .map(|i| {
                let cost: f64 = rng.random_range(0.0..60.0);
                SupplyCurve {
                    supplier_id: i,
                    kind: if rng.random_bool(0.5) {
                        CurveKind::MeritStep
                    } else {
                        CurveKind::PlsfRamp
                    },
                    marginal_cost: if rng.random_bool(0.5) { cost.round() } else { cost },
                    max_capacity: rng.random_range(0.0..100.0),
                }
            })
            .collect();
        MarketInstance {
            curves,
            demand: rng.random_range(0.0..250.0),
            theta: rng.random_range(0.0..150.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn merit(id: usize, c: f64, cap: f64) -> SupplyCurve {
        SupplyCurve {
            supplier_id: id,
            kind: CurveKind::MeritStep,
            marginal_cost: c,
            max_capacity: cap,
        }
    }

    #[test]
    fn grid_finds_the_merit_kink() {
        let curves = [merit(0, 10.0, 30.0), merit(1, 20.0, 20.0), merit(2, 50.0, 100.0)];
        let (p, f) = grid_minimum(&curves, 50.0, 100.0, GRID_STEP);
        assert!((p - 20.0).abs() < 1e-9);
        assert!((f - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn grid_finds_the_ramp_vertex() {
        let ramp = SupplyCurve {
            supplier_id: 0,
            kind: CurveKind::PlsfRamp,
            marginal_cost: 10.0,
            max_capacity: 30.0,
        };
        let (p, f) = grid_minimum(&[ramp], 18.0, 12.0, GRID_STEP);
        assert!((p - 6.0).abs() < 1e-9);
        assert!((f - 108.0).abs() < 1e-9);
    }
}
