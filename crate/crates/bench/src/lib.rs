//! Fixtures shared by the benchmarks.

use pilotsim_core::balancer::{Balancer, HealthCheckConfig, SchedulerPolicy};
use pilotsim_core::{parse_scenario, ScenarioConfig, ZoneId};

pub const CANONICAL: &str = include_str!("../../../scenarios/pilot-light-canonical.json");
pub const AUTOSCALE: &str = include_str!("../../../scenarios/autoscale-november.json");

pub fn scenario(json: &str) -> ScenarioConfig {
    parse_scenario(json).expect("shipped scenario parses")
}

/// A canonical scenario cut to `hours` of simulated time.
pub fn canonical_hours(hours: u64) -> ScenarioConfig {
    let mut cfg = scenario(CANONICAL);
    cfg.run.duration_ms = hours * 3_600_000;
    cfg.faults.retain(|f| f.at_ms < cfg.run.duration_ms);
    cfg
}

/// `n` healthy backends in zone A.
pub fn balancer(policy: SchedulerPolicy, n: usize) -> Balancer {
    let mut b = Balancer::new(policy.clone(), HealthCheckConfig::default());
    for i in 0..n {
        b.register_backend(ZoneId::A, &format!("web-{i}"), policy.weight_for(i), true)
            .expect("unique ids");
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        assert!(scenario(CANONICAL).validate().is_empty());
        assert!(scenario(AUTOSCALE).validate().is_empty());
        assert!(canonical_hours(1).validate().is_empty());
        assert_eq!(
            balancer(SchedulerPolicy::RoundRobin, 4).eligible_count(&[ZoneId::A]),
            4
        );
    }
}
