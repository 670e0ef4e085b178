use gridspin::dispatch::{balance_residual, run_trace};
use gridspin::metrics::{capacities_for_level, run_ensemble, SweepMode, TraceMetrics};
use gridspin::pipeline::{simulate, simulate_trace};
use gridspin::scenario::{builtin_scenario, BidFormat, ExcessPolicy, MarketConfig, TransportCostMatrix};
use gridspin::traces::gen_trace;
use gridspin::{validate_scenario, Error, ScenarioConfig};
use proptest::prelude::*;

fn case_a() -> ScenarioConfig {
    builtin_scenario("case_a").unwrap()
}

fn short(mut cfg: ScenarioConfig, steps: usize) -> ScenarioConfig {
    cfg.horizon_steps = steps;
    cfg
}

fn with_market(mut cfg: ScenarioConfig, bid_format: BidFormat, theta: f64, policy: ExcessPolicy) -> ScenarioConfig {
    cfg.market = Some(MarketConfig { theta, bid_format });
    cfg.excess_policy = policy;
    cfg
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn ensemble_is_identical_across_pool_sizes() {
    let cfg = with_market(short(case_a(), 96), BidFormat::Plsf, 100.0, ExcessPolicy::Rollover);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ensemble(&cfg, 40).unwrap())
    };
    let one = run(1);
    for threads in [2, 3, 8] {
        assert_eq!(run(threads), one);
    }
}

#[test]
fn standard_error_halves_with_four_times_the_traces() {
    let cfg = case_a();
    let small = run_ensemble(&cfg, 100).unwrap().summary;
    let large = run_ensemble(&cfg, 400).unwrap().summary;
    for (a, b) in [
        (small.coe, large.coe),
        (small.gas_peak, large.gas_peak),
        (small.curtailed, large.curtailed),
    ] {
        let ratio = a.std_error() / b.std_error();
        assert!((1.6..=2.5).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn curtailment_and_gas_fall_with_additive_capacity() {
    let base = case_a();
    let mut last: Option<(f64, f64)> = None;
    for level in [0.0, 11.0, 22.0, 33.0, 50.0] {
        let caps = capacities_for_level(&base, SweepMode::Additive, level).unwrap();
        let s = run_ensemble(&base.with_compute_capacities(&caps), 60).unwrap().summary;
        if let Some((c, g)) = last {
            assert!(s.curtailed.mean <= c, "curtailment rose at level {level}");
            assert!(s.gas_mean.mean <= g, "gas rose at level {level}");
        }
        last = Some((s.curtailed.mean, s.gas_mean.mean));
    }
}

#[test]
fn distributed_capacity_curtails_less_on_shared_traces() {
    let a = case_a();
    let b = builtin_scenario("case_b").unwrap();
    for id in 0..20 {
        let trace = gen_trace(&a, id).unwrap();
        assert_eq!(trace, gen_trace(&b, id).unwrap());
        let ra = TraceMetrics::from_run(&a, &trace, &simulate(&a, &trace).unwrap());
        let rb = TraceMetrics::from_run(&b, &trace, &simulate(&b, &trace).unwrap());
        assert!(rb.curtailed_mw <= ra.curtailed_mw + 1e-9, "trace {id}");
        assert!(rb.coe <= ra.coe + 1e-9, "trace {id}");
    }
}

#[test]
fn low_theta_buys_only_from_suppliers_below_it() {
    let cfg = with_market(case_a(), BidFormat::Merit, 12.0, ExcessPolicy::Shed);
    let cfg = cfg.with_compute_capacities(&[30.0, 30.0, 40.0]);
    let (_, run) = simulate_trace(&cfg, 3).unwrap();
    let mut bought_from_solar = 0.0;
    for o in run.market.unwrap() {
        assert_eq!(o.quantities[1], 0.0);
        assert_eq!(o.quantities[2], 0.0);
        assert!(o.served <= 30.0 + 1e-9);
        bought_from_solar += o.quantities[0];
    }
    assert!(bought_from_solar > 0.0);
}

#[test]
fn cost_accounting_matches_flow_list() {
    for cfg in [
        case_a(),
        with_market(
            builtin_scenario("sweep").unwrap(),
            BidFormat::Plsf,
            100.0,
            ExcessPolicy::Rollover,
        ),
    ] {
        let h = cfg.step_hours();
        for id in 0..5 {
            let (trace, run) = simulate_trace(&cfg, id).unwrap();
            let mut total = 0.0;
            let mut delivered = 0.0;
            for rec in &run.dispatch {
                let from_flows: f64 = rec
                    .flows
                    .iter()
                    .map(|f| f.mw * (cfg.nodes[f.from].energy_cost + cfg.transport.get(f.from, f.to)) * h)
                    .sum();
                assert!(close(rec.energy_cost_total, from_flows));
                let by_node: f64 = (0..cfg.node_count()).map(|n| rec.cost_at(n, h)).sum();
                assert!(close(rec.energy_cost_total, by_node));
                let flow_mw: f64 = rec.flows.iter().map(|f| f.mw).sum();
                assert!(close(flow_mw, rec.total_local_served() + rec.total_compute_placed()));
                total += from_flows;
                delivered += flow_mw * h;
            }
            let m = TraceMetrics::from_run(&cfg, &trace, &run);
            assert!(close(m.energy_cost_usd, total));
            assert!(close(m.coe, total / delivered));
        }
    }
}

#[test]
fn rollover_serves_at_least_shed_when_theta_covers_every_cost() {
    let base = builtin_scenario("sweep")
        .unwrap()
        .with_compute_capacities(&[30.0, 30.0, 40.0]);
    for bid in [BidFormat::Merit, BidFormat::Plsf] {
        let shed = with_market(base.clone(), bid, 100.0, ExcessPolicy::Shed);
        let roll = with_market(base.clone(), bid, 100.0, ExcessPolicy::Rollover);
        for id in 0..20 {
            let trace = gen_trace(&shed, id).unwrap();
            let s = TraceMetrics::from_run(&shed, &trace, &simulate(&shed, &trace).unwrap());
            let r = TraceMetrics::from_run(&roll, &trace, &simulate(&roll, &trace).unwrap());
            assert!(
                r.compute_served_mwh >= s.compute_served_mwh - 1e-9,
                "{bid:?} trace {id}"
            );
        }
    }
}

/// Scenario knobs drawn inside their valid ranges.
fn knobs() -> impl Strategy<Value = ScenarioConfig> {
    (
        0.0..15.0f64,
        0.0..80.0f64,
        prop::array::uniform3(0.0..120.0f64),
        prop::sample::select(vec![None, Some(BidFormat::Merit), Some(BidFormat::Plsf)]),
        0.0..150.0f64,
        prop::bool::ANY,
        any::<u64>(),
    )
        .prop_map(|(sigma, transport, caps, bid, theta, rollover, seed)| {
            let mut cfg = short(case_a(), 48).with_compute_capacities(&caps);
            cfg.walk_sigma = sigma;
            cfg.transport = TransportCostMatrix::uniform(3, transport);
            cfg.master_seed = seed;
            cfg.market = bid.map(|bid_format| MarketConfig { theta, bid_format });
            cfg.excess_policy = if rollover {
                ExcessPolicy::Rollover
            } else {
                ExcessPolicy::Shed
            };
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn valid_configs_run_and_balance(cfg in knobs(), id in 0u64..1000) {
        prop_assert!(validate_scenario(&cfg).is_empty());
        let (trace, run) = simulate_trace(&cfg, id).unwrap();
        for rec in &run.dispatch {
            prop_assert!(balance_residual(rec) <= 1e-9, "residual {}", balance_residual(rec));
        }
        let m = TraceMetrics::from_run(&cfg, &trace, &run);
        let h = cfg.step_hours();
        let accounted = m.compute_served_mwh + m.shed_mwh + m.final_queue_mw * h;
        prop_assert!(close(m.arrivals_mwh, accounted), "{} vs {}", m.arrivals_mwh, accounted);
    }

    #[test]
    fn renewable_compute_capacity_never_adds_curtailment(
        caps in prop::array::uniform3(0.0..100.0f64),
        node in 0usize..2,
        extra in 0.0..60.0f64,
        id in 0u64..1000,
    ) {
        let cfg = short(case_a(), 96).with_compute_capacities(&caps);
        let mut more = caps;
        more[node] += extra;
        let bigger = cfg.with_compute_capacities(&more);
        let trace = gen_trace(&cfg, id).unwrap();
        let curtailed = |c: &ScenarioConfig| -> f64 {
            run_trace(c, &trace).unwrap().iter().map(|r| r.total_curtailed()).sum()
        };
        prop_assert!(curtailed(&bigger) <= curtailed(&cfg) + 1e-9);
    }
}

#[test]
fn infeasible_local_demand_is_reported() {
    let mut cfg = short(case_a(), 4);
    cfg.nodes[2].energy_capacity = 0.0;
    cfg.initial_generation = vec![0.0, 0.0, 0.0];
    cfg.walk_sigma = 0.0;
    match simulate_trace(&cfg, 0) {
        Err(Error::InfeasibleDemand { t: 0, unmet }) => assert!((unmet - 120.0).abs() < 1e-9),
        other => panic!("expected infeasible demand, got {other:?}"),
    }
}
