use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pilotsim_bench::balancer;
use pilotsim_core::balancer::SchedulerPolicy;
use pilotsim_core::ZoneId;

fn picks(c: &mut Criterion) {
    let mut group = c.benchmark_group("pick");
    for n in [3usize, 16, 64] {
        let policies = [
            ("round_robin", SchedulerPolicy::RoundRobin),
            ("least_outstanding", SchedulerPolicy::LeastOutstanding),
            (
                "weighted",
                SchedulerPolicy::Weighted((1..=n as u32).collect()),
            ),
        ];
        for (name, policy) in policies {
            let mut b = balancer(policy, n);
            group.bench_with_input(BenchmarkId::new(name, n), &n, |bench, _| {
                bench.iter(|| {
                    let i = b.pick_in(ZoneId::A).expect("healthy");
                    b.pool_mut(ZoneId::A).release(i);
                    black_box(i)
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, picks);
criterion_main!(benches);
