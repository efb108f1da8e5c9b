//! Front load balancer: backend pools, health checking and the
//! round-robin / least-outstanding / smooth-weighted disciplines.
//!
//! Each zone owns a [`Pool`]. A [`ZoneSplit`] chooses the zone (used for
//! the active/active share), then the pool's policy chooses the node.
//! Every tie is broken by the lowest registration index.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::ZoneId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerPolicy {
    RoundRobin,
    LeastOutstanding,
    /// Per-node weights in registration order; later nodes weigh 1.
    Weighted(Vec<u32>),
}

impl SchedulerPolicy {
    pub fn weight_for(&self, registration_index: usize) -> u32 {
        match self {
            SchedulerPolicy::Weighted(ws) => ws.get(registration_index).copied().unwrap_or(1),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthCheckConfig {
    pub interval_ms: u64,
    pub fall_threshold: u32,
    pub rise_threshold: u32,
}

impl Default for HealthCheckConfig {
    fn default() -> Self {
        Self {
            interval_ms: 2000,
            fall_threshold: 3,
            rise_threshold: 2,
        }
    }
}

impl HealthCheckConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.interval_ms == 0 {
            return Err("health interval must be > 0".into());
        }
        if self.fall_threshold == 0 || self.rise_threshold == 0 {
            return Err("health thresholds must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BalancerError {
    #[error("no healthy backend")]
    NoHealthyBackend,
    #[error("backend {0} already registered")]
    DuplicateBackend(String),
    #[error("unknown backend {0}")]
    UnknownBackend(String),
}

#[derive(Debug, Clone)]
pub struct Backend {
    pub container: String,
    pub zone: ZoneId,
    pub weight: u32,
    pub health: Health,
    pub consecutive_fails: u32,
    pub consecutive_passes: u32,
    /// In service plus queued.
    pub outstanding: u32,
    pub registration_index: u64,
    pub draining: bool,
    credit: i64,
    active: Vec<u64>,
    queue: VecDeque<u64>,
}

impl Backend {
    pub fn eligible(&self) -> bool {
        self.health == Health::Up && !self.draining
    }

    pub fn in_service(&self) -> usize {
        self.active.len()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }
}

/// Result of handing a picked request to a backend's worker slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Started,
    Queued,
    Rejected,
}

/// Health-state change produced by a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    BecameUp,
    BecameDown,
}

#[derive(Debug, Clone, Default)]
pub struct Pool {
    backends: Vec<Backend>,
    rr_cursor: usize,
}

impl Pool {
    pub fn backends(&self) -> &[Backend] {
        &self.backends
    }

    pub fn len(&self) -> usize {
        self.backends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backends.is_empty()
    }

    pub fn position(&self, container: &str) -> Option<usize> {
        self.backends.iter().position(|b| b.container == container)
    }

    pub fn get(&self, container: &str) -> Option<&Backend> {
        self.backends.iter().find(|b| b.container == container)
    }

    pub fn has_eligible(&self) -> bool {
        self.backends.iter().any(Backend::eligible)
    }

    fn push(&mut self, backend: Backend) -> Result<(), BalancerError> {
        if self.position(&backend.container).is_some() {
            return Err(BalancerError::DuplicateBackend(backend.container));
        }
        self.backends.push(backend);
        Ok(())
    }

    fn remove(&mut self, idx: usize) -> Backend {
        let b = self.backends.remove(idx);
        if self.rr_cursor > idx {
            self.rr_cursor -= 1;
        }
        if self.rr_cursor >= self.backends.len() {
            self.rr_cursor = 0;
        }
        b
    }

    /// Choose a backend index and bump its outstanding count.
    pub fn pick(&mut self, policy: &SchedulerPolicy) -> Result<usize, BalancerError> {
        let idx = match policy {
            SchedulerPolicy::RoundRobin => self.pick_round_robin(),
            SchedulerPolicy::LeastOutstanding => self.pick_least_outstanding(),
            SchedulerPolicy::Weighted(_) => self.smooth_weighted_pick(),
        }
        .ok_or(BalancerError::NoHealthyBackend)?;
        self.backends[idx].outstanding += 1;
        Ok(idx)
    }

    fn pick_round_robin(&mut self) -> Option<usize> {
        let n = self.backends.len();
        for step in 0..n {
            let i = (self.rr_cursor + step) % n;
            if self.backends[i].eligible() {
                self.rr_cursor = (i + 1) % n;
                return Some(i);
            }
        }
        None
    }

    fn pick_least_outstanding(&self) -> Option<usize> {
        self.backends
            .iter()
            .enumerate()
            .filter(|(_, b)| b.eligible())
            .min_by_key(|(_, b)| (b.outstanding, b.registration_index))
            .map(|(i, _)| i)
    }

    /// Hand a picked request to the backend's workers.
    pub fn admit(
        &mut self,
        idx: usize,
        request: u64,
        concurrency: Option<u32>,
        queue_limit: Option<u32>,
    ) -> Admission {
        let b = &mut self.backends[idx];
        let slots = concurrency.map_or(usize::MAX, |c| c as usize);
        if b.active.len() < slots {
            b.active.push(request);
            return Admission::Started;
        }
        if queue_limit.is_some_and(|q| b.queue.len() >= q as usize) {
            b.outstanding -= 1;
            return Admission::Rejected;
        }
        b.queue.push_back(request);
        Admission::Queued
    }

    /// Undo a pick whose request failed before reaching the workers.
    pub fn release(&mut self, idx: usize) {
        let b = &mut self.backends[idx];
        b.outstanding = b.outstanding.saturating_sub(1);
    }

    /// Finish `request`; returns the queued request that takes its slot.
    pub fn complete(&mut self, container: &str, request: u64) -> Option<u64> {
        let b = self
            .backends
            .iter_mut()
            .find(|b| b.container == container)?;
        let pos = b.active.iter().position(|&r| r == request)?;
        b.active.swap_remove(pos);
        b.outstanding = b.outstanding.saturating_sub(1);
        let next = b.queue.pop_front()?;
        b.active.push(next);
        Some(next)
    }

    /// Drop every in-flight and queued request on a crashed backend.
    pub fn fail_in_flight(&mut self, container: &str) -> Vec<u64> {
        let Some(b) = self.backends.iter_mut().find(|b| b.container == container) else {
            return Vec::new();
        };
        let mut lost: Vec<u64> = b.active.drain(..).collect();
        lost.extend(b.queue.drain(..));
        b.outstanding = 0;
        lost
    }

    pub fn on_probe_result(
        &mut self,
        container: &str,
        pass: bool,
        cfg: &HealthCheckConfig,
    ) -> Option<Transition> {
        let b = self
            .backends
            .iter_mut()
            .find(|b| b.container == container)?;
        apply_probe(b, pass, cfg)
    }
}

impl Pool {
    /// Smooth weighted round-robin: credit every eligible node by its
    /// weight, take the richest, charge it the total.
    fn smooth_weighted_pick(&mut self) -> Option<usize> {
        let mut total = 0i64;
        for b in self.backends.iter_mut().filter(|b| b.eligible()) {
            b.credit += b.weight as i64;
            total += b.weight as i64;
        }
        let idx = self
            .backends
            .iter()
            .enumerate()
            .filter(|(_, b)| b.eligible())
            // max credit; on equal credit the earlier registration wins
            .max_by(|(_, x), (_, y)| {
                x.credit
                    .cmp(&y.credit)
                    .then(y.registration_index.cmp(&x.registration_index))
            })
            .map(|(i, _)| i)?;
        self.backends[idx].credit -= total;
        Some(idx)
    }
}

fn apply_probe(b: &mut Backend, pass: bool, cfg: &HealthCheckConfig) -> Option<Transition> {
    if pass {
        b.consecutive_fails = 0;
        b.consecutive_passes += 1;
        if b.health == Health::Down && b.consecutive_passes == cfg.rise_threshold {
            b.health = Health::Up;
            return Some(Transition::BecameUp);
        }
    } else {
        b.consecutive_passes = 0;
        b.consecutive_fails += 1;
        if b.health == Health::Up && b.consecutive_fails == cfg.fall_threshold {
            b.health = Health::Down;
            return Some(Transition::BecameDown);
        }
    }
    None
}

/// Weighted split across zones (active/active share).
#[derive(Debug, Clone, Default)]
pub struct ZoneSplit {
    weights: BTreeMap<ZoneId, u32>,
    credit: BTreeMap<ZoneId, i64>,
}

impl ZoneSplit {
    pub fn new(weights: impl IntoIterator<Item = (ZoneId, u32)>) -> Self {
        let weights: BTreeMap<_, _> = weights.into_iter().collect();
        let credit = weights.keys().map(|z| (*z, 0)).collect();
        Self { weights, credit }
    }

    pub fn weight(&self, zone: ZoneId) -> u32 {
        self.weights.get(&zone).copied().unwrap_or(1)
    }

    /// Smooth weighted choice among `candidates` (zone order breaks ties).
    pub fn pick(&mut self, candidates: &[ZoneId]) -> Option<ZoneId> {
        if candidates.len() <= 1 {
            return candidates.first().copied();
        }
        let mut total = 0i64;
        let mut best: Option<(ZoneId, i64)> = None;
        for &z in candidates {
            let w = self.weight(z) as i64;
            let c = self.credit.entry(z).or_insert(0);
            *c += w;
            total += w;
            if best.is_none_or(|(_, bc)| *c > bc) {
                best = Some((z, *c));
            }
        }
        let (z, _) = best?;
        *self.credit.get_mut(&z).expect("credited above") -= total;
        Some(z)
    }
}

/// The front balancer across both zones.
#[derive(Debug, Clone)]
pub struct Balancer {
    pub policy: SchedulerPolicy,
    pub health: HealthCheckConfig,
    pub concurrency: Option<u32>,
    pub queue_limit: Option<u32>,
    pub split: ZoneSplit,
    pools: BTreeMap<ZoneId, Pool>,
    next_registration: u64,
}

impl Balancer {
    pub fn new(policy: SchedulerPolicy, health: HealthCheckConfig) -> Self {
        Self {
            policy,
            health,
            concurrency: None,
            queue_limit: None,
            split: ZoneSplit::default(),
            pools: BTreeMap::new(),
            next_registration: 0,
        }
    }

    pub fn pool(&self, zone: ZoneId) -> Option<&Pool> {
        self.pools.get(&zone)
    }

    pub fn pool_mut(&mut self, zone: ZoneId) -> &mut Pool {
        self.pools.entry(zone).or_default()
    }

    pub fn pools(&self) -> impl Iterator<Item = (&ZoneId, &Pool)> {
        self.pools.iter()
    }

    pub fn find(&self, container: &str) -> Option<(ZoneId, &Backend)> {
        self.pools
            .iter()
            .find_map(|(z, p)| p.get(container).map(|b| (*z, b)))
    }

    /// Add a backend. `healthy` registers it as Up immediately (initial
    /// fleet); otherwise it must pass `rise_threshold` probes first.
    pub fn register_backend(
        &mut self,
        zone: ZoneId,
        container: &str,
        weight: u32,
        healthy: bool,
    ) -> Result<(), BalancerError> {
        if self.find(container).is_some() {
            return Err(BalancerError::DuplicateBackend(container.to_string()));
        }
        let registration_index = self.next_registration;
        let backend = Backend {
            container: container.to_string(),
            zone,
            weight: weight.max(1),
            health: if healthy { Health::Up } else { Health::Down },
            consecutive_fails: 0,
            consecutive_passes: 0,
            outstanding: 0,
            registration_index,
            draining: false,
            credit: 0,
            active: Vec::new(),
            queue: VecDeque::new(),
        };
        self.pool_mut(zone).push(backend)?;
        self.next_registration += 1;
        Ok(())
    }

    /// Stop routing new requests to `container`.
    pub fn drain(&mut self, container: &str) -> Result<(), BalancerError> {
        for pool in self.pools.values_mut() {
            if let Some(i) = pool.position(container) {
                pool.backends[i].draining = true;
                return Ok(());
            }
        }
        Err(BalancerError::UnknownBackend(container.to_string()))
    }

    pub fn deregister(&mut self, container: &str) -> Result<Backend, BalancerError> {
        for pool in self.pools.values_mut() {
            if let Some(i) = pool.position(container) {
                return Ok(pool.remove(i));
            }
        }
        Err(BalancerError::UnknownBackend(container.to_string()))
    }

    pub fn on_probe_result(&mut self, container: &str, pass: bool) -> Option<Transition> {
        let cfg = self.health;
        self.pools
            .values_mut()
            .find_map(|p| p.on_probe_result(container, pass, &cfg))
    }

    /// Pick a zone among `routable` that has an eligible backend.
    pub fn pick_zone(&mut self, routable: &[ZoneId]) -> Option<ZoneId> {
        let candidates: Vec<ZoneId> = routable
            .iter()
            .copied()
            .filter(|z| self.pools.get(z).is_some_and(Pool::has_eligible))
            .collect();
        self.split.pick(&candidates)
    }

    pub fn pick_in(&mut self, zone: ZoneId) -> Result<usize, BalancerError> {
        let policy = self.policy.clone();
        self.pools
            .get_mut(&zone)
            .ok_or(BalancerError::NoHealthyBackend)?
            .pick(&policy)
    }

    /// Eligible backends across `zones`.
    pub fn eligible_count(&self, zones: &[ZoneId]) -> usize {
        zones
            .iter()
            .filter_map(|z| self.pools.get(z))
            .flat_map(|p| p.backends.iter())
            .filter(|b| b.eligible())
            .count()
    }

    pub fn outstanding_total(&self, zones: &[ZoneId]) -> u64 {
        zones
            .iter()
            .filter_map(|z| self.pools.get(z))
            .flat_map(|p| p.backends.iter())
            .filter(|b| b.eligible())
            .map(|b| b.outstanding as u64)
            .sum()
    }
}

/// Convenience: pick over a standalone pool.
pub fn pick_backend<'a>(
    pool: &'a mut Pool,
    policy: &SchedulerPolicy,
) -> Result<&'a Backend, BalancerError> {
    let i = pool.pick(policy)?;
    Ok(&pool.backends[i])
}
