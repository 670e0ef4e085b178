//! Whole-MW placement problems small enough to enumerate.

use gridspin::scenario::{Node, NodeKind, TransportCostMatrix};
use gridspin::ScenarioConfig;
use rand::Rng;

pub const NODES: usize = 3;

/// Every quantity is a whole number of MW or $/MWh. Local demand is zero,
/// so each node's energy excess is its availability (renewables) or its
/// capacity (dispatchable).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementInstance {
    pub dispatchable: [bool; NODES],
    pub energy_cost: [i64; NODES],
    pub transport: [[i64; NODES]; NODES],
    pub energy_excess: [i64; NODES],
    pub compute_capacity: [i64; NODES],
    pub demand: i64,
}

/// Most MW placed, and the least $/h among placements of that size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Optimum {
    pub placed: i64,
    pub cost: i64,
}

impl PlacementInstance {
    /// Quantities in `0..=max_mw`, at least one dispatchable node.
    pub fn random<R: Rng>(rng: &mut R, max_mw: i64) -> Self {
        let mut dispatchable = [false; NODES];
        for d in &mut dispatchable {
            *d = rng.random_bool(0.4);
        }
        if !dispatchable.iter().any(|&d| d) {
            dispatchable[rng.random_range(0..NODES)] = true;
        }
        let mut energy_cost = [0; NODES];
        for (c, &d) in energy_cost.iter_mut().zip(&dispatchable) {
            *c = if d {
                rng.random_range(20..=60)
            } else {
                rng.random_range(0..=40)
            };
        }
        let mut transport = [[0; NODES]; NODES];
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let t = rng.random_range(0..=40);
            transport[i][j] = t;
            transport[j][i] = t;
        }
        let mut mw = || rng.random_range(0..=max_mw);
        let energy_excess = [mw(), mw(), mw()];
        let compute_capacity = [mw(), mw(), mw()];
        PlacementInstance {
            dispatchable,
            energy_cost,
            transport,
            energy_excess,
            compute_capacity,
            demand: mw(),
        }
    }

    pub fn slack_cost(&self) -> i64 {
        (0..NODES)
            .filter(|&n| self.dispatchable[n])
            .map(|n| self.energy_cost[n])
            .min()
            .expect("at least one dispatchable node")
    }

    pub fn route_cost(&self, from: usize, to: usize) -> i64 {
        self.energy_cost[from] + self.transport[from][to]
    }

    pub fn eligible(&self, from: usize, to: usize) -> bool {
        self.route_cost(from, to) <= self.slack_cost()
    }

    /// The same problem as a scenario, for the engine under test.
    pub fn to_config(&self) -> ScenarioConfig {
        let nodes = (0..NODES)
            .map(|n| {
                let kind = match (self.dispatchable[n], n % 2) {
                    (true, _) => NodeKind::Gas,
                    (false, 0) => NodeKind::Solar,
                    (false, _) => NodeKind::Wind,
                };
                Node {
                    id: n,
                    kind,
                    energy_capacity: self.energy_excess[n] as f64,
                    compute_capacity: self.compute_capacity[n] as f64,
                    energy_cost: self.energy_cost[n] as f64,
                    carbon_intensity: if self.dispatchable[n] {
                        0.9
                    } else {
                        0.05 * (n + 1) as f64
                    },
                    dispatchable: self.dispatchable[n],
                }
            })
            .collect();
        let mut cfg = ScenarioConfig::from_nodes("enumerated", nodes);
        cfg.transport = TransportCostMatrix {
            cost: self
                .transport
                .iter()
                .map(|row| row.iter().map(|&t| t as f64).collect())
                .collect(),
        };
        cfg
    }

    /// Renewable availability per node for the engine's step state.
    pub fn availability(&self) -> Vec<f64> {
        (0..NODES)
            .map(|n| {
                if self.dispatchable[n] {
                    0.0
                } else {
                    self.energy_excess[n] as f64
                }
            })
            .collect()
    }

    /// Try every whole-MW assignment of the nine routes.
    pub fn exhaustive(&self) -> Optimum {
        let mut best = Optimum { placed: 0, cost: 0 };
        let mut row = self.energy_excess;
        let mut col = self.compute_capacity;
        self.search(0, self.demand, 0, 0, &mut row, &mut col, &mut best);
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        k: usize,
        left: i64,
        placed: i64,
        cost: i64,
        row: &mut [i64; NODES],
        col: &mut [i64; NODES],
        best: &mut Optimum,
    ) {
        if k == NODES * NODES {
            if placed > best.placed || (placed == best.placed && cost < best.cost) {
                *best = Optimum { placed, cost };
            }
            return;
        }
        let (m, n) = (k / NODES, k % NODES);
        let hi = if self.eligible(m, n) {
            left.min(row[m]).min(col[n])
        } else {
            0
        };
        let unit = self.route_cost(m, n);
        for x in 0..=hi {
            row[m] -= x;
            col[n] -= x;
            self.search(k + 1, left - x, placed + x, cost + x * unit, row, col, best);
            row[m] += x;
            col[n] += x;
        }
    }
}
