//! Cost-ordered allocation of energy sources to sinks.
//!
//! Each pass of the loop moves as much load as possible along the cheapest
//! route still open, then re-evaluates remaining excess. Routes are ranked
//! by `(unit cost, source carbon intensity)` with lower node ids winning
//! exact ties. Re-routing earlier placements is allowed (residual edges), so
//! the final assignment is a minimum-cost one for the quantity placed.

/// Energy available at a node, with its ranking attributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub node: usize,
    pub capacity: f64,
    pub carbon: f64,
}

/// A node that can absorb up to `capacity` MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sink {
    pub node: usize,
    pub capacity: f64,
}

/// MW moved from `sources[source]` to `sinks[sink]` at `unit_cost` $/MWh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub source: usize,
    pub sink: usize,
    pub mw: f64,
    pub unit_cost: f64,
}

/// Quantities below this are treated as zero.
pub const QTY_EPS: f64 = 1e-12;
const COST_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    cost: f64,
    carbon: f64,
}

impl Key {
    const ZERO: Key = Key { cost: 0.0, carbon: 0.0 };

    fn add(self, o: Key) -> Key {
        Key {
            cost: self.cost + o.cost,
            carbon: self.carbon + o.carbon,
        }
    }

    fn neg(self) -> Key {
        Key {
            cost: -self.cost,
            carbon: -self.carbon,
        }
    }

    fn better_than(self, o: Key) -> bool {
        let tol = COST_EPS * (1.0 + o.cost.abs());
        if self.cost < o.cost - tol {
            return true;
        }
        if self.cost > o.cost + tol {
            return false;
        }
        self.carbon < o.carbon - COST_EPS * (1.0 + o.carbon.abs())
    }
}

struct Edge {
    to: usize,
    cap: f64,
    key: Key,
    rev: usize,
}

struct Graph {
    adj: Vec<Vec<Edge>>,
}

impl Graph {
    fn new(n: usize) -> Self {
        Self {
            adj: (0..n).map(|_| Vec::new()).collect(),
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: f64, key: Key) -> (usize, usize) {
        let fi = self.adj[from].len();
        let ti = self.adj[to].len();
        self.adj[from].push(Edge { to, cap, key, rev: ti });
        self.adj[to].push(Edge {
            to: from,
            cap: 0.0,
            key: key.neg(),
            rev: fi,
        });
        (from, fi)
    }

    /// Bellman-Ford over residual edges; returns the predecessor edge of
    /// each vertex on the best path from `s`.
    fn shortest_path(&self, s: usize) -> Vec<Option<(usize, usize)>> {
        let n = self.adj.len();
        let mut dist: Vec<Option<Key>> = vec![None; n];
        let mut pred = vec![None; n];
        dist[s] = Some(Key::ZERO);
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                let Some(du) = dist[u] else { continue };
                for (ei, e) in self.adj[u].iter().enumerate() {
                    if e.cap <= QTY_EPS {
                        continue;
                    }
                    let cand = du.add(e.key);
                    if dist[e.to].is_none_or(|dv| cand.better_than(dv)) {
                        dist[e.to] = Some(cand);
                        pred[e.to] = Some((u, ei));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        pred
    }
}

/// Place up to `demand` MW from `sources` into `sinks` at minimum total
/// cost. `route_cost(source, sink)` gives the $/MWh of a route, or `None`
/// when the route is not allowed.
///
/// Returns the merged per-route assignments, ordered by (source, sink).
pub fn allocate<F>(sources: &[Source], sinks: &[Sink], demand: f64, route_cost: F) -> Vec<Assignment>
where
    F: Fn(usize, usize) -> Option<f64>,
{
    let ns = sources.len();
    let nk = sinks.len();
    let s = 0;
    let t = 1 + ns + nk;
    let mut g = Graph::new(t + 1);

    for (i, src) in sources.iter().enumerate() {
        g.add_edge(s, 1 + i, src.capacity.max(0.0), Key::ZERO);
    }
    let mut route_edges = Vec::new();
    let mut route_costs = Vec::new();
    for (i, src) in sources.iter().enumerate() {
        for j in 0..nk {
            if let Some(cost) = route_cost(i, j) {
                let key = Key {
                    cost,
                    carbon: src.carbon,
                };
                route_edges.push((i, j, g.add_edge(1 + i, 1 + ns + j, f64::INFINITY, key)));
                route_costs.push(cost);
            }
        }
    }
    for (j, sink) in sinks.iter().enumerate() {
        g.add_edge(1 + ns + j, t, sink.capacity.max(0.0), Key::ZERO);
    }

    let mut remaining = demand.max(0.0);
    while remaining > QTY_EPS {
        let pred = g.shortest_path(s);
        if pred[t].is_none() {
            break;
        }
        let mut push = remaining;
        let mut v = t;
        while let Some((u, ei)) = pred[v] {
            push = push.min(g.adj[u][ei].cap);
            v = u;
        }
        if push <= QTY_EPS {
            break;
        }
        let mut v = t;
        while let Some((u, ei)) = pred[v] {
            let rev = g.adj[u][ei].rev;
            g.adj[u][ei].cap -= push;
            g.adj[v][rev].cap += push;
            v = u;
        }
        remaining -= push;
    }

    route_edges
        .iter()
        .zip(route_costs)
        .filter_map(|(&(i, j, (u, ei)), unit_cost)| {
            let e = &g.adj[u][ei];
            let mw = g.adj[e.to][e.rev].cap;
            (mw > QTY_EPS).then_some(Assignment {
                source: i,
                sink: j,
                mw,
                unit_cost,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src(node: usize, capacity: f64, carbon: f64) -> Source {
        Source { node, capacity, carbon }
    }

    fn sink(node: usize, capacity: f64) -> Sink {
        Sink { node, capacity }
    }

    #[test]
    fn fills_cheapest_first() {
        let sources = [src(0, 5.0, 0.0), src(1, 10.0, 0.0)];
        let sinks = [sink(0, 100.0)];
        let costs = [3.0, 1.0];
        let a = allocate(&sources, &sinks, 12.0, |i, _| Some(costs[i]));
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].mw, 10.0);
        assert_eq!(a[0].mw, 2.0);
    }

    #[test]
    fn equal_cost_prefers_lower_carbon() {
        let sources = [src(0, 10.0, 0.9), src(1, 10.0, 0.1)];
        let a = allocate(&sources, &[sink(0, 100.0)], 4.0, |_, _| Some(50.0));
        assert_eq!(
            a,
            vec![Assignment {
                source: 1,
                sink: 0,
                mw: 4.0,
                unit_cost: 50.0
            }]
        );
    }

    #[test]
    fn equal_cost_and_carbon_prefers_lower_id() {
        let sources = [src(0, 10.0, 0.5), src(1, 10.0, 0.5)];
        let a = allocate(&sources, &[sink(0, 100.0)], 4.0, |_, _| Some(7.0));
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].source, 0);
    }

    #[test]
    fn reroutes_when_cheapest_pair_blocks() {
        // Cheapest pair (0,0) would strand source 1 on an expensive route.
        let costs = [[1.0, 2.0], [2.0, 100.0]];
        let sources = [src(0, 1.0, 0.0), src(1, 1.0, 0.0)];
        let sinks = [sink(0, 1.0), sink(1, 1.0)];
        let a = allocate(&sources, &sinks, 2.0, |i, j| Some(costs[i][j]));
        let total: f64 = a.iter().map(|x| x.mw * x.unit_cost).sum();
        assert_eq!(total, 4.0);
    }

    #[test]
    fn respects_disallowed_routes_and_capacity() {
        let sources = [src(0, 10.0, 0.0)];
        let sinks = [sink(0, 3.0), sink(1, 10.0)];
        let a = allocate(&sources, &sinks, 8.0, |_, j| (j == 0).then_some(1.0));
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].mw, 3.0);
    }

    #[test]
    fn zero_demand_moves_nothing() {
        let a = allocate(&[src(0, 10.0, 0.0)], &[sink(0, 10.0)], 0.0, |_, _| Some(1.0));
        assert!(a.is_empty());
    }
}
