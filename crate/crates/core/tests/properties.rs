use proptest::prelude::*;

use pilotsim_core::balancer::{Balancer, HealthCheckConfig, SchedulerPolicy};
use pilotsim_core::dbcluster::{DbCluster, MonitorConfig, SyncMode};
use pilotsim_core::drctl::DrMode;
use pilotsim_core::engine::Scheduler;
use pilotsim_core::faults::{FaultEvent, FaultKind};
use pilotsim_core::replay::replay;
use pilotsim_core::storage::{Quorum, ReplicaVolume, TrustedPool};
use pilotsim_core::{parse_scenario, run_scenario, RunOptions, SimTime, ZoneId};

fn picks(policy: SchedulerPolicy, n: usize, rounds: usize) -> Vec<usize> {
    let mut b = Balancer::new(policy.clone(), HealthCheckConfig::default());
    for i in 0..n {
        b.register_backend(ZoneId::A, &format!("w{i}"), policy.weight_for(i), true)
            .unwrap();
    }
    let mut counts = vec![0; n];
    for _ in 0..rounds {
        let i = b.pick_in(ZoneId::A).unwrap();
        b.pool_mut(ZoneId::A).release(i);
        counts[i] += 1;
    }
    counts
}

proptest! {
    #[test]
    fn scheduler_pops_in_order(times in prop::collection::vec(0u64..1000, 1..200)) {
        let mut s = Scheduler::new();
        for (i, &t) in times.iter().enumerate() {
            s.schedule(SimTime(t), i).unwrap();
        }
        let mut last = (SimTime::ZERO, 0);
        let mut n = 0;
        while let Some(ev) = s.pop_until(SimTime(1000)) {
            prop_assert!((ev.time, ev.seq) > last || n == 0);
            last = (ev.time, ev.seq);
            n += 1;
        }
        prop_assert_eq!(n, times.len());
    }

    #[test]
    fn round_robin_equal_share(n in 1usize..8, k in 1usize..50) {
        let counts = picks(SchedulerPolicy::RoundRobin, n, n * k);
        prop_assert!(counts.iter().all(|&c| c == k));
    }

    #[test]
    fn weighted_exact_per_cycle(w in prop::collection::vec(1u32..20, 1..6), cycles in 1usize..5) {
        let total: u32 = w.iter().sum();
        let counts = picks(SchedulerPolicy::Weighted(w.clone()), w.len(), total as usize * cycles);
        for (c, wi) in counts.iter().zip(&w) {
            prop_assert_eq!(*c, *wi as usize * cycles);
        }
    }

    #[test]
    fn quorum_gates_writes(n in 1usize..7, down in 0usize..7, q in 0u8..3) {
        let quorum = [Quorum::Majority, Quorum::All, Quorum::One][q as usize];
        let bricks: Vec<String> = (0..n).map(|i| format!("b{i}")).collect();
        let mut pool = TrustedPool::default();
        for b in &bricks {
            pool.peer_probe(b, true).unwrap();
        }
        let mut v = ReplicaVolume::create(&pool, "gv", &bricks, quorum).unwrap();
        v.start();
        for b in bricks.iter().take(down.min(n)) {
            v.set_brick_up(b, false);
        }
        let up = n - down.min(n);
        let needed = match quorum {
            Quorum::Majority => n / 2 + 1,
            Quorum::All => n,
            Quorum::One => 1,
        };
        prop_assert_eq!(v.writable(), up >= needed);
        prop_assert_eq!(v.readable(), up >= 1);
    }

    #[test]
    fn db_single_master_and_lsn_bound(ops in prop::collection::vec((0u8..5, 0usize..4), 1..300), sync in any::<bool>()) {
        let mode = if sync { SyncMode::Sync } else { SyncMode::Async };
        let mut c = DbCluster::new(MonitorConfig::default());
        c.add_replica("m", ZoneId::A, true, true, 300, mode);
        for i in 0..3 {
            c.add_replica(&format!("s{i}"), ZoneId::A, false, true, 300, mode);
        }
        let mut pending = Vec::new();
        let mut now = 0u64;
        for (op, idx) in ops {
            now += 100;
            let t = SimTime(now);
            match op {
                0 | 1 => {
                    if let Ok(commit) = c.commit(t) {
                        pending.extend(commit.applies);
                    }
                }
                2 => {
                    let (ready, rest): (Vec<_>, Vec<_>) = pending.into_iter().partition(|a| a.at <= t);
                    pending = rest;
                    for a in ready {
                        c.replicate_apply(a, t);
                    }
                }
                3 => {
                    let up = !c.replica(idx).up;
                    pending.extend(c.set_up(idx, up, t));
                }
                _ => {
                    if !c.write_available() && c.failover(t, None).is_ok() {
                        pending.extend(c.repoint_slaves(t));
                    }
                }
            }
            prop_assert!(c.master_count() <= 1);
            prop_assert!(c.lsn_bound_holds());
        }
    }
}

const SMALL: &str = r#"{
    "schema_version": 1,
    "name": "prop",
    "topology": {"zones": [
        {"id": "A", "role": "primary", "containers": [
            {"id": "lb", "role": "balancer_front"},
            {"id": "web-1", "role": "web_server"},
            {"id": "web-2", "role": "web_server"},
            {"id": "db-m", "role": "db_master"},
            {"id": "db-s", "role": "db_slave"},
            {"id": "brick-1", "role": "storage_brick"},
            {"id": "brick-2", "role": "storage_brick"}
        ]},
        {"id": "B", "role": "standby", "mirror": true}
    ]},
    "balancer": {"policy": "least_outstanding", "backend_concurrency": 3, "queue_limit": 5},
    "workload": {"arrival": {"poisson": 6.0}, "read_fraction": 0.7,
                 "service_time": {"exponential": 200.0}},
    "run": {"duration_ms": 600000, "seed": 1}
}"#;

const NODES: [&str; 6] = ["web-1", "web-2", "db-m", "db-s", "brick-1", "lb"];

fn fault_strategy() -> impl Strategy<Value = Vec<FaultEvent>> {
    let one = (
        0u64..500_000,
        1_000u64..90_000,
        0usize..9,
        0usize..NODES.len(),
    )
        .prop_map(|(at, len, kind, node)| {
            let id = NODES[node].to_string();
            match kind {
                0..=2 => vec![
                    FaultEvent {
                        at_ms: at,
                        fault: FaultKind::NodeCrash(id.clone()),
                    },
                    FaultEvent {
                        at_ms: at + len,
                        fault: FaultKind::NodeRecover(id),
                    },
                ],
                3 => vec![FaultEvent {
                    at_ms: at,
                    fault: FaultKind::NodeCrash(id),
                }],
                4 => vec![FaultEvent {
                    at_ms: at,
                    fault: FaultKind::DataCorruption(id),
                }],
                5 | 6 => vec![FaultEvent {
                    at_ms: at,
                    fault: FaultKind::LinkDown { duration_ms: len },
                }],
                7 => vec![FaultEvent {
                    at_ms: at,
                    fault: FaultKind::ZoneOutage(ZoneId::A),
                }],
                _ => vec![
                    FaultEvent {
                        at_ms: at,
                        fault: FaultKind::ZoneOutage(ZoneId::B),
                    },
                    FaultEvent {
                        at_ms: at + len,
                        fault: FaultKind::ZoneRecover(ZoneId::B),
                    },
                ],
            }
        });
    prop::collection::vec(one, 0..9).prop_map(|groups| {
        let mut all: Vec<FaultEvent> = groups.into_iter().flatten().collect();
        all.sort_by_key(|f| f.at_ms);
        all
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simulation_invariants(faults in fault_strategy(), mode in 0usize..4, seed in any::<u64>()) {
        let mut cfg = parse_scenario(SMALL).unwrap().with_mode_defaults(DrMode::ALL[mode]);
        cfg.faults = faults;
        prop_assume!(cfg.validate().is_empty());
        let out = run_scenario(&cfg, &RunOptions { seed: Some(seed), trace: true }).unwrap();
        let r = &out.report;
        prop_assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
        let outcomes: u64 = r.requests.outcomes.values().sum();
        prop_assert_eq!(outcomes, r.requests.total);
        let dispatched: u64 = r.requests.per_backend.values().sum();
        prop_assert_eq!(dispatched + r.requests.failed_before_dispatch, r.requests.total);
        let a = &r.availability;
        prop_assert!(a.read_downtime_ms <= a.downtime_ms && a.write_downtime_ms <= a.downtime_ms);
        let replayed = replay(out.trace.as_ref().unwrap(), cfg.run.duration_ms).unwrap();
        prop_assert_eq!(
            (replayed.downtime_ms, replayed.read_downtime_ms, replayed.write_downtime_ms),
            (a.downtime_ms, a.read_downtime_ms, a.write_downtime_ms)
        );
        for d in &r.recovery.disasters {
            prop_assert!(d.record.serving_time >= d.record.detection_time);
            prop_assert!(d.record.detection_time >= d.record.failure_time);
            // A partition or standby outage before the failure leaves the
            // sync replica behind.
            let degraded = cfg.faults.iter().any(|f| {
                f.at() <= d.record.failure_time
                    && matches!(f.fault, FaultKind::LinkDown { .. } | FaultKind::ZoneOutage(ZoneId::B))
            });
            if d.record.mode == DrMode::ActiveActive && !degraded {
                prop_assert_eq!(d.record.rpo_transactions, 0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn autoscaled_simulation_invariants(faults in fault_strategy(), rate in 2.0f64..30.0, seed in any::<u64>()) {
        let mut cfg = parse_scenario(SMALL).unwrap();
        cfg.faults = faults;
        cfg.workload.arrival = pilotsim_core::engine::Arrival::Poisson(rate);
        cfg.autoscale = Some(serde_json::from_str(r#"{
            "high_threshold": 2.0, "low_threshold": 0.5, "evaluation_interval_ms": 5000,
            "sustain_windows": 2, "cooldown_ms": 20000, "min_nodes": 1, "max_nodes": 6, "step": 2
        }"#).unwrap());
        prop_assume!(cfg.validate().is_empty());
        let policy = cfg.autoscale.clone().unwrap();
        let out = run_scenario(&cfg, &RunOptions { seed: Some(seed), trace: true }).unwrap();
        let r = &out.report;
        prop_assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
        let applied: Vec<_> = r.scale_actions.iter().filter(|a| a.applied).collect();
        for w in applied.windows(2) {
            prop_assert!(w[1].time.0 - w[0].time.0 >= policy.cooldown_ms);
        }
        prop_assert!(r.scale_samples.iter().all(|s| s.nodes <= policy.max_nodes));
        let outcomes: u64 = r.requests.outcomes.values().sum();
        prop_assert_eq!(outcomes, r.requests.total);
        let replayed = replay(out.trace.as_ref().unwrap(), cfg.run.duration_ms).unwrap();
        prop_assert_eq!(replayed.downtime_ms, r.availability.downtime_ms);
        prop_assert_eq!(replayed.per_backend, r.requests.per_backend.clone());
    }
}
