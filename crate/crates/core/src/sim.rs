//! The simulation driver. Owns every component, routes events to them,
//! tracks availability online and records the exported trace.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use thiserror::Error;

use crate::autoscaler::{Autoscaler, ScaleDecision};
use crate::balancer::{Admission, Balancer, Transition};
use crate::dbcluster::{DbCluster, DbRole, Lsn, PendingApply, PromotionRecord, QueryKind};
use crate::drctl::{
    plan_recovery, redirect_traffic, DrMode, DrParams, FailoverState, FailoverStateMachine,
    RecoveryPlan, RecoveryRecord, Routing,
};
use crate::engine::{
    next_arrival, Classify, EventKind, RngState, Scheduler, SimTime, TraceRecord, WorkloadSpec,
};
use crate::faults::FaultKind;
use crate::metrics::{
    measure_rto_rpo, sla_verdict, AvailabilityTracker, BackupStats, DbStats, ReportMeta,
    RequestStats, RunReport, ScaleAction, ScaleSample,
};
use crate::scenario::{Diagnostic, ScenarioConfig};
use crate::storage::{Quorum, ReplicaVolume, Shipment, SnapshotCatalog, TrustedPool};
use crate::topology::{
    ContainerSpec, LinkState, Role, RunState, Topology, TopologyError, ZoneId, ZoneMode, ZoneRole,
};

const STREAM_ARRIVALS: u64 = 1;
const STREAM_CLASS: u64 = 2;
const STREAM_SERVICE: u64 = 3;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces `run.seed` when set.
    pub seed: Option<u64>,
    /// Record the NDJSON trace.
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: Option<Vec<TraceRecord>>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {}", join(.0))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

fn join(d: &[Diagnostic]) -> String {
    d.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Validate, build and run a scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutput, SimError> {
    let diags = cfg.validate();
    if !diags.is_empty() {
        return Err(SimError::Invalid(diags));
    }
    let mut sim = Simulation::new(cfg, opts)?;
    sim.run();
    Ok(sim.finish())
}

#[derive(Debug, Clone)]
enum Ev {
    Fault(FaultKind),
    LinkUp,
    Arrival,
    Completion { req: u64, container: String },
    Probe,
    MonitorTick,
    Apply(PendingApply),
    BackupTick,
    ShipmentArrive(Shipment),
    ScaleEval,
    ContainerUp { id: String, up_at: SimTime },
    Promote,
    Dr(DrStep),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DrStep {
    Activate,
    RestoreDone,
    Serve,
}

impl Classify for Ev {
    fn kind(&self) -> EventKind {
        match self {
            Ev::Fault(_) | Ev::LinkUp => EventKind::FaultTrigger,
            Ev::Arrival => EventKind::RequestArrival,
            Ev::Completion { .. } => EventKind::ServiceCompletion,
            Ev::Probe => EventKind::HealthProbe,
            Ev::MonitorTick => EventKind::MonitorTick,
            Ev::Apply(_) => EventKind::ReplicationApply,
            Ev::BackupTick | Ev::ShipmentArrive(_) => EventKind::BackupTick,
            Ev::ScaleEval => EventKind::ScaleEvaluation,
            Ev::ContainerUp { .. } | Ev::Promote | Ev::Dr(_) => EventKind::RecoveryStep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Success,
    ServiceUnavailable,
    NodeCrashed,
    ReadUnavailable,
    WriteUnavailable,
    StorageUnavailable,
    Overloaded,
}

impl Outcome {
    fn label(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::ServiceUnavailable => "failed_service_unavailable",
            Outcome::NodeCrashed => "failed_node_crashed",
            Outcome::ReadUnavailable => "failed_read_unavailable",
            Outcome::WriteUnavailable => "failed_write_unavailable",
            Outcome::StorageUnavailable => "failed_storage_unavailable",
            Outcome::Overloaded => "failed_overloaded",
        }
    }
}

struct InFlight {
    container: String,
    service_ms: u64,
}

struct Disaster {
    zone: ZoneId,
    target: ZoneId,
    failure: SimTime,
    detection: Option<SimTime>,
    primary_lsn: Lsn,
    as_of_at_failure: Vec<SimTime>,
    sm: FailoverStateMachine,
    plan: Option<RecoveryPlan>,
    restore_done: bool,
    serve_scheduled: bool,
}

/// Observable state exported in trace effects. The replay oracle rebuilds
/// availability from these facts alone.
#[derive(Debug, Clone, PartialEq, Default)]
struct Facts {
    containers: BTreeMap<String, (ZoneId, Role, bool)>,
    backends: BTreeMap<String, (ZoneId, bool)>,
    routable: Vec<ZoneId>,
    primary: Option<ZoneId>,
    link_up: Option<bool>,
    db: BTreeMap<String, (bool, bool)>,
    volumes: BTreeMap<ZoneId, (bool, Vec<String>, Quorum)>,
}

fn role_name(r: Role) -> Value {
    serde_json::to_value(r).expect("role serializes")
}

fn quorum_name(q: Quorum) -> Value {
    serde_json::to_value(q).expect("quorum serializes")
}

impl Facts {
    fn diff(&self, new: &Facts) -> Vec<Value> {
        let mut out = Vec::new();
        for (id, &(zone, role, up)) in &new.containers {
            if self.containers.get(id) != Some(&(zone, role, up)) {
                out.push(json!({"container": {"id": id, "zone": zone, "role": role_name(role), "up": up}}));
            }
        }
        for (id, &(zone, eligible)) in &new.backends {
            if self.backends.get(id) != Some(&(zone, eligible)) {
                out.push(json!({"backend": {"id": id, "zone": zone, "eligible": eligible}}));
            }
        }
        for id in self.backends.keys() {
            if !new.backends.contains_key(id) {
                out.push(json!({"backend_removed": {"id": id}}));
            }
        }
        if self.routable != new.routable {
            out.push(json!({"routable": {"zones": new.routable}}));
        }
        if self.primary != new.primary {
            out.push(json!({"primary": {"zone": new.primary}}));
        }
        if self.link_up != new.link_up {
            out.push(json!({"link": {"up": new.link_up}}));
        }
        for (id, &(master, attached)) in &new.db {
            if self.db.get(id) != Some(&(master, attached)) {
                out.push(json!({"db": {"id": id, "master": master, "attached": attached}}));
            }
        }
        for (zone, v) in &new.volumes {
            if self.volumes.get(zone) != Some(v) {
                out.push(json!({"volume": {"zone": zone, "started": v.0, "bricks": v.1, "quorum": quorum_name(v.2)}}));
            }
        }
        out
    }
}

struct Simulation {
    cfg: ScenarioConfig,
    params: DrParams,
    mode: DrMode,
    seed: u64,
    end: SimTime,
    workload: WorkloadSpec,
    sched: Scheduler<Ev>,
    topo: Topology,
    balancer: Balancer,
    db: DbCluster,
    pools: [TrustedPool; 2],
    volumes: [Option<ReplicaVolume>; 2],
    catalog: SnapshotCatalog,
    routing: Routing,
    link_down_until: SimTime,
    rng_arrival: RngState,
    rng_class: RngState,
    rng_service: RngState,
    next_req: u64,
    inflight: BTreeMap<u64, InFlight>,
    total_requests: u64,
    failed_before_dispatch: u64,
    outcomes: BTreeMap<String, u64>,
    per_backend: BTreeMap<String, u64>,
    tracker: AvailabilityTracker,
    disaster: Option<Disaster>,
    records: Vec<RecoveryRecord>,
    unrecovered: Vec<String>,
    autoscaler: Option<Autoscaler>,
    auto_counter: u32,
    scale_actions: Vec<ScaleAction>,
    scale_samples: Vec<ScaleSample>,
    failovers: Vec<PromotionRecord>,
    promote_zone: Option<ZoneId>,
    commits: u64,
    backups: BackupStats,
    violations: Vec<String>,
    events: u64,
    last_time: SimTime,
    trace: Option<Vec<TraceRecord>>,
    facts: Facts,
    note: Vec<(&'static str, Value)>,
}

impl Simulation {
    fn new(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Self, SimError> {
        let seed = opts.seed.unwrap_or(cfg.run.seed);
        let params = cfg.params();
        let mode = cfg.mode();
        let mut topo = cfg.build_topology()?;
        let primary = topo.primary();
        let standby = primary.other();
        let posture = mode.posture();

        topo.zone_mut(primary).mode = ZoneMode::Active;
        topo.zone_mut(standby).mode = if posture.containers_running() {
            ZoneMode::Active
        } else {
            ZoneMode::Idle
        };
        for z in [primary, standby] {
            if topo.zone(z).mode == ZoneMode::Active {
                for c in &mut topo.zone_mut(z).containers {
                    c.state = RunState::Up;
                }
            }
        }

        let mut balancer = Balancer::new(cfg.balancer.policy.clone(), cfg.balancer.health);
        balancer.concurrency = cfg.balancer.backend_concurrency;
        balancer.queue_limit = cfg.balancer.queue_limit;
        balancer.split = crate::balancer::ZoneSplit::new([
            (ZoneId::A, params.weights[0]),
            (ZoneId::B, params.weights[1]),
        ]);

        let mut db = DbCluster::new(cfg.db.monitor);
        db.exclude_master_reads = cfg.db.exclude_master_reads;
        for z in [primary, standby] {
            let running = topo.zone(z).mode == ZoneMode::Active;
            let ids: Vec<(String, Role)> = topo
                .zone(z)
                .containers
                .iter()
                .map(|c| (c.spec.id.clone(), c.spec.role))
                .collect();
            for (id, role) in ids {
                match role {
                    Role::WebServer => {
                        let weight = balancer.policy.weight_for(balancer_len(&balancer));
                        balancer
                            .register_backend(z, &id, weight, running)
                            .expect("ids are unique");
                    }
                    Role::DbMaster | Role::DbSlave => {
                        let (delay, sync) = if z == primary {
                            (cfg.db.replication_delay_ms, cfg.db.sync)
                        } else {
                            (params.standby_replication_delay_ms, params.standby_sync)
                        };
                        let idx = db.add_replica(
                            &id,
                            z,
                            role == Role::DbMaster && z == primary,
                            running,
                            delay,
                            sync,
                        );
                        if !running {
                            db.detach(idx);
                        }
                    }
                    _ => {}
                }
            }
        }

        let routable = if mode == DrMode::ActiveActive {
            vec![primary, standby]
        } else {
            vec![primary]
        };
        let autoscaler = cfg.autoscale.clone().map(Autoscaler::new);
        let mut sim = Simulation {
            cfg: cfg.clone(),
            mode,
            seed,
            end: SimTime(cfg.run.duration_ms),
            workload: cfg.workload(),
            sched: Scheduler::new(),
            topo,
            balancer,
            db,
            pools: [TrustedPool::default(), TrustedPool::default()],
            volumes: [None, None],
            catalog: SnapshotCatalog::default(),
            routing: Routing { routable },
            link_down_until: SimTime::ZERO,
            rng_arrival: RngState::stream(seed, STREAM_ARRIVALS),
            rng_class: RngState::stream(seed, STREAM_CLASS),
            rng_service: RngState::stream(seed, STREAM_SERVICE),
            next_req: 0,
            inflight: BTreeMap::new(),
            total_requests: 0,
            failed_before_dispatch: 0,
            outcomes: BTreeMap::new(),
            per_backend: BTreeMap::new(),
            tracker: AvailabilityTracker::default(),
            disaster: None,
            records: Vec::new(),
            unrecovered: Vec::new(),
            autoscaler,
            auto_counter: 0,
            scale_actions: Vec::new(),
            scale_samples: Vec::new(),
            failovers: Vec::new(),
            promote_zone: None,
            commits: 0,
            backups: BackupStats {
                taken: 0,
                skipped: 0,
                delivered: 0,
                interrupted: 0,
            },
            violations: Vec::new(),
            events: 0,
            last_time: SimTime::ZERO,
            trace: opts.trace.then(Vec::new),
            facts: Facts::default(),
            note: Vec::new(),
            params,
        };
        for z in [primary, standby] {
            if sim.topo.zone(z).mode == ZoneMode::Active {
                sim.ensure_volume(z);
            }
        }
        sim.schedule_initial();
        Ok(sim)
    }

    fn schedule_initial(&mut self) {
        // Faults first: at equal times they precede periodic events.
        for f in self.cfg.faults.clone() {
            self.at(f.at(), Ev::Fault(f.fault));
        }
        self.at(SimTime::ZERO, Ev::Arrival);
        let hc = self.balancer.health.interval_ms;
        self.at(SimTime(hc), Ev::Probe);
        self.at(self.db.monitor.first_probe(), Ev::MonitorTick);
        if let Some(cadence) = self.params.backup_cadence_ms {
            if !self.mode.posture().containers_running() && cadence > 0 {
                self.at(SimTime::ZERO, Ev::BackupTick);
            }
        }
        if let Some(a) = &self.autoscaler {
            self.at(SimTime(a.policy.evaluation_interval_ms), Ev::ScaleEval);
        }
    }

    fn at(&mut self, time: SimTime, ev: Ev) {
        if time <= self.end {
            self.sched
                .schedule(time, ev)
                .expect("events are never scheduled in the past");
        }
    }

    fn after(&mut self, delay: u64, ev: Ev) {
        let t = self.sched.now().plus(delay);
        self.at(t, ev);
    }

    fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn primary(&self) -> ZoneId {
        self.topo.primary()
    }

    fn run(&mut self) {
        self.sync_derived(SimTime::ZERO);
        let (r, w) = self.availability();
        self.tracker.update(SimTime::ZERO, r, w);
        if self.trace.is_some() {
            let facts = self.collect_facts();
            let effects = Facts::default().diff(&facts);
            self.facts = facts;
            let payload = json!({
                "scenario": self.cfg.name,
                "seed": self.seed,
                "mode": self.mode,
                "duration_ms": self.end.0,
                "effects": effects,
            });
            self.push_trace(0, 0, "Init", payload);
        }
        while let Some(ev) = self.sched.pop_until(self.end) {
            let now = ev.time;
            if now < self.last_time {
                self.violations
                    .push(format!("event time went backwards at seq {}", ev.seq));
            }
            self.last_time = now;
            self.events += 1;
            let kind = ev.payload.kind();
            let label = self.handle(ev.payload);
            self.sync_derived(now);
            self.check_invariants(now);
            let (r, w) = self.availability();
            self.tracker.update(now, r, w);
            if self.trace.is_some() {
                let facts = self.collect_facts();
                let effects = self.facts.diff(&facts);
                let notable = !effects.is_empty() || !self.note.is_empty();
                if notable {
                    let mut payload = serde_json::Map::new();
                    payload.insert("event".into(), Value::String(label));
                    for (k, v) in self.note.drain(..) {
                        payload.insert(k.into(), v);
                    }
                    payload.insert("effects".into(), Value::Array(effects));
                    self.push_trace(now.0, ev.seq, &format!("{kind:?}"), Value::Object(payload));
                }
                self.facts = facts;
            }
            self.note.clear();
        }
        self.sched.advance_to(self.end);
    }

    fn push_trace(&mut self, time: u64, seq: u64, kind: &str, payload: Value) {
        if let Some(t) = &mut self.trace {
            t.push(TraceRecord {
                time,
                seq,
                kind: kind.to_string(),
                payload,
            });
        }
    }

    fn note(&mut self, key: &'static str, value: Value) {
        if self.trace.is_some() {
            self.note.push((key, value));
        }
    }

    fn handle(&mut self, ev: Ev) -> String {
        match ev {
            Ev::Fault(f) => {
                let label = f.label();
                self.on_fault(f);
                label
            }
            Ev::LinkUp => {
                self.on_link_up();
                "link_up".into()
            }
            Ev::Arrival => {
                self.on_arrival();
                "arrival".into()
            }
            Ev::Completion { req, container } => {
                self.on_completion(req, &container);
                "completion".into()
            }
            Ev::Probe => {
                self.on_probe();
                "health_probe".into()
            }
            Ev::MonitorTick => {
                self.on_monitor();
                "monitor_tick".into()
            }
            Ev::Apply(a) => {
                // Deliveries still on the wire die with their master.
                if self.db.write_available() {
                    self.db.replicate_apply(a, self.now());
                }
                "replication_apply".into()
            }
            Ev::BackupTick => {
                self.on_backup_tick();
                "backup_tick".into()
            }
            Ev::ShipmentArrive(s) => {
                if self.catalog.deliver(s) {
                    self.backups.delivered += 1;
                    self.note("snapshot_delivered", json!(s.snapshot.taken_at));
                } else {
                    self.backups.interrupted += 1;
                    self.note("snapshot_lost", json!(s.snapshot.taken_at));
                }
                "snapshot_arrival".into()
            }
            Ev::ScaleEval => {
                self.on_scale_eval();
                "scale_evaluation".into()
            }
            Ev::ContainerUp { id, up_at } => {
                self.on_container_up(&id, up_at);
                format!("container_up({id})")
            }
            Ev::Promote => {
                self.on_promote();
                "db_promotion".into()
            }
            Ev::Dr(step) => {
                self.on_dr(step);
                format!("dr_{}", format!("{step:?}").to_lowercase())
            }
        }
    }

    // ---- availability -------------------------------------------------

    fn zone_has_role(&self, z: ZoneId, role: Role) -> bool {
        self.topo.zone(z).with_role(role).any(|c| !c.retired)
    }

    fn zone_role_serving(&self, z: ZoneId, role: Role) -> bool {
        self.topo.zone(z).with_role(role).any(|c| c.serving())
    }

    fn fronts_ok(&self, z: ZoneId) -> bool {
        !self.zone_has_role(z, Role::BalancerFront)
            || self.zone_role_serving(z, Role::BalancerFront)
    }

    fn router_ok(&self) -> bool {
        let any = [ZoneId::A, ZoneId::B]
            .iter()
            .any(|&z| self.zone_has_role(z, Role::DbRouter));
        !any || [ZoneId::A, ZoneId::B]
            .iter()
            .any(|&z| self.zone_role_serving(z, Role::DbRouter))
    }

    fn entry_ok(&self, z: ZoneId) -> bool {
        self.routing.routable.contains(&z)
            && self.fronts_ok(z)
            && self.balancer.pool(z).is_some_and(|p| {
                p.backends()
                    .iter()
                    .any(|b| b.eligible() && self.topo.is_serving(&b.container))
            })
    }

    fn storage_ok(&self, z: ZoneId, write: bool) -> bool {
        match &self.volumes[z.index()] {
            Some(v) => {
                if write {
                    v.writable()
                } else {
                    v.readable()
                }
            }
            None => !self.zone_has_role(z, Role::StorageBrick),
        }
    }

    fn availability(&self) -> (bool, bool) {
        if !self.router_ok() {
            return (false, false);
        }
        let zones = [ZoneId::A, ZoneId::B];
        let read = self.db.read_available()
            && zones
                .iter()
                .any(|&z| self.entry_ok(z) && self.storage_ok(z, false));
        let write = self.db.write_available()
            && zones
                .iter()
                .any(|&z| self.entry_ok(z) && self.storage_ok(z, true));
        (read, write)
    }

    fn collect_facts(&self) -> Facts {
        let mut f = Facts::default();
        for (z, c) in self.topo.all_containers() {
            f.containers
                .insert(c.spec.id.clone(), (z, c.spec.role, c.serving()));
        }
        for (z, pool) in self.balancer.pools() {
            for b in pool.backends() {
                f.backends.insert(b.container.clone(), (*z, b.eligible()));
            }
        }
        f.routable = self.routing.routable.clone();
        f.primary = Some(self.primary());
        f.link_up = Some(self.topo.link.is_up());
        for r in self.db.replicas() {
            f.db.insert(r.container.clone(), (r.role == DbRole::Master, !r.detached));
        }
        for z in [ZoneId::A, ZoneId::B] {
            if let Some(v) = &self.volumes[z.index()] {
                f.volumes.insert(z, (v.started, v.bricks.clone(), v.quorum));
            }
        }
        f
    }

    /// Bring replica reachability and brick liveness in line with the
    /// containers and the link.
    fn sync_derived(&mut self, now: SimTime) {
        let primary = self.primary();
        let link_up = self.topo.link.is_up();
        for i in 0..self.db.replicas().len() {
            let r = self.db.replica(i);
            let want = self.topo.is_serving(&r.container) && (r.zone == primary || link_up);
            if r.up != want {
                if let Some(a) = self.db.set_up(i, want, now) {
                    self.at(a.at, Ev::Apply(a));
                }
            }
        }
        for z in [ZoneId::A, ZoneId::B] {
            let Some(bricks) = self.volumes[z.index()].as_ref().map(|v| v.bricks.clone()) else {
                continue;
            };
            for b in bricks {
                let up = self.topo.is_serving(&b);
                if let Some(v) = &mut self.volumes[z.index()] {
                    v.set_brick_up(&b, up);
                }
            }
        }
    }

    fn check_invariants(&mut self, now: SimTime) {
        if self.db.master_count() > 1 {
            self.violations
                .push(format!("{now}: {} db masters", self.db.master_count()));
        }
        if !self.db.lsn_bound_holds() {
            self.violations
                .push(format!("{now}: a slave is ahead of its master"));
        }
    }

    // ---- storage ------------------------------------------------------

    fn ensure_volume(&mut self, z: ZoneId) {
        if self.volumes[z.index()].is_some() {
            return;
        }
        let bricks: Vec<String> = self
            .topo
            .zone(z)
            .with_role(Role::StorageBrick)
            .filter(|c| c.serving())
            .map(|c| c.spec.id.clone())
            .collect();
        if bricks.is_empty() {
            return;
        }
        for b in &bricks {
            if !self.pools[z.index()].contains(b) {
                let _ = self.pools[z.index()].peer_probe(b, true);
            }
        }
        let name = format!("gv-{z}");
        let Ok(mut vol) = ReplicaVolume::create(
            &self.pools[z.index()],
            &name,
            &bricks,
            self.cfg.storage.quorum,
        ) else {
            return;
        };
        let clients: Vec<String> = self
            .topo
            .zone(z)
            .with_role(Role::WebServer)
            .map(|c| c.spec.id.clone())
            .collect();
        for c in &clients {
            vol.allow(c);
        }
        vol.start();
        for c in &clients {
            let _ = vol.mount(c);
        }
        self.volumes[z.index()] = Some(vol);
    }

    // ---- requests -----------------------------------------------------

    fn on_arrival(&mut self) {
        let now = self.now();
        let req = self.next_req;
        self.next_req += 1;
        self.total_requests += 1;
        let is_read = self.rng_class.uniform() < self.workload.read_fraction;
        let service_ms = self.workload.service_time.sample(&mut self.rng_service);
        let next = next_arrival(&self.workload, &mut self.rng_arrival, now);
        if next < self.end {
            self.at(next, Ev::Arrival);
        }
        let (backend, outcome) = self.dispatch(req, is_read, service_ms);
        if let Some(o) = outcome {
            self.finish_request(o);
        }
        self.note("req", json!(req));
        self.note("class", json!(if is_read { "read" } else { "write" }));
        self.note("backend", json!(backend));
        self.note("outcome", json!(outcome.map_or("started", Outcome::label)));
    }

    fn finish_request(&mut self, o: Outcome) {
        *self.outcomes.entry(o.label().to_string()).or_default() += 1;
    }

    /// Returns the picked backend and the outcome if the request already
    /// finished (failed or rejected).
    fn dispatch(
        &mut self,
        req: u64,
        is_read: bool,
        service_ms: u64,
    ) -> (Option<String>, Option<Outcome>) {
        let routable = self.routing.routable.clone();
        let Some(zone) = self.balancer.pick_zone(&routable) else {
            self.failed_before_dispatch += 1;
            return (None, Some(Outcome::ServiceUnavailable));
        };
        if !self.fronts_ok(zone) {
            self.failed_before_dispatch += 1;
            return (None, Some(Outcome::ServiceUnavailable));
        }
        let Ok(idx) = self.balancer.pick_in(zone) else {
            self.failed_before_dispatch += 1;
            return (None, Some(Outcome::ServiceUnavailable));
        };
        let container = self.balancer.pool(zone).expect("picked").backends()[idx]
            .container
            .clone();
        *self.per_backend.entry(container.clone()).or_default() += 1;
        let fail = |s: &mut Self, o: Outcome| {
            s.balancer.pool_mut(zone).release(idx);
            (Some(container.clone()), Some(o))
        };
        if !self.topo.is_serving(&container) {
            return fail(self, Outcome::NodeCrashed);
        }
        if !self.router_ok() {
            return fail(
                self,
                if is_read {
                    Outcome::ReadUnavailable
                } else {
                    Outcome::WriteUnavailable
                },
            );
        }
        if is_read {
            if self.db.route_query(QueryKind::Read).is_err() {
                return fail(self, Outcome::ReadUnavailable);
            }
        } else if !self.db.write_available() {
            return fail(self, Outcome::WriteUnavailable);
        }
        if !self.storage_ok(zone, !is_read) {
            return fail(self, Outcome::StorageUnavailable);
        }
        let (conc, ql) = (self.balancer.concurrency, self.balancer.queue_limit);
        let admission = self.balancer.pool_mut(zone).admit(idx, req, conc, ql);
        if admission == Admission::Rejected {
            return (Some(container), Some(Outcome::Overloaded));
        }
        if !is_read {
            let commit = self.db.commit(self.now()).expect("master checked above");
            self.commits += 1;
            for a in commit.applies {
                self.at(a.at, Ev::Apply(a));
            }
            if let Some(v) = &mut self.volumes[zone.index()] {
                let _ = v.write(0.0);
            }
        }
        self.inflight.insert(
            req,
            InFlight {
                container: container.clone(),
                service_ms,
            },
        );
        if admission == Admission::Started {
            self.after(
                service_ms,
                Ev::Completion {
                    req,
                    container: container.clone(),
                },
            );
        }
        (Some(container), None)
    }

    fn on_completion(&mut self, req: u64, container: &str) {
        let Some(done) = self.inflight.remove(&req) else {
            return;
        };
        debug_assert_eq!(done.container, container);
        self.finish_request(Outcome::Success);
        let Some((zone, _)) = self.balancer.find(container) else {
            return;
        };
        if let Some(next) = self.balancer.pool_mut(zone).complete(container, req) {
            let service = self.inflight.get(&next).map_or(0, |f| f.service_ms);
            self.after(
                service,
                Ev::Completion {
                    req: next,
                    container: container.to_string(),
                },
            );
        }
        self.maybe_finish_drain(container);
    }

    fn fail_in_flight(&mut self, container: &str) {
        let Some((zone, _)) = self.balancer.find(container) else {
            return;
        };
        let lost = self.balancer.pool_mut(zone).fail_in_flight(container);
        for r in lost {
            if self.inflight.remove(&r).is_some() {
                self.finish_request(Outcome::NodeCrashed);
            }
        }
    }

    // ---- health and monitor --------------------------------------------

    fn on_probe(&mut self) {
        let targets: Vec<String> = self
            .balancer
            .pools()
            .flat_map(|(_, p)| p.backends().iter().map(|b| b.container.clone()))
            .collect();
        let mut changes = Vec::new();
        for id in targets {
            let pass = self.topo.is_serving(&id);
            match self.balancer.on_probe_result(&id, pass) {
                Some(Transition::BecameDown) => {
                    changes.push(json!({"id": id, "health": "down"}));
                    self.fallback_trigger();
                }
                Some(Transition::BecameUp) => changes.push(json!({"id": id, "health": "up"})),
                None => {}
            }
        }
        if !changes.is_empty() {
            self.note("transitions", Value::Array(changes));
        }
        self.after(self.balancer.health.interval_ms, Ev::Probe);
    }

    /// The balancer sees a failed primary zone with every backend down.
    fn fallback_trigger(&mut self) {
        let Some(d) = &self.disaster else { return };
        if d.detection.is_some() {
            return;
        }
        let z = d.zone;
        let all_down = self.balancer.pool(z).is_none_or(|p| !p.has_eligible());
        if all_down && self.routing.routable.contains(&z) {
            self.detect();
        }
    }

    fn on_monitor(&mut self) {
        use crate::dbcluster::MonitorVerdict;
        let verdict = self.db.monitor_probe();
        match verdict {
            MonitorVerdict::MasterFailed => {
                let master_zone = self.db.master().map(|m| m.zone);
                let zone_failed =
                    master_zone.is_some_and(|z| self.topo.zone(z).mode == ZoneMode::Failed);
                self.note("monitor", json!("master_failed"));
                if zone_failed
                    && self
                        .disaster
                        .as_ref()
                        .is_some_and(|d| Some(d.zone) == master_zone)
                {
                    if self
                        .disaster
                        .as_ref()
                        .is_some_and(|d| d.detection.is_none())
                    {
                        self.detect();
                    }
                } else {
                    let primary = self.primary();
                    let zone = if self.db.has_promotable(Some(primary)) {
                        Some(Some(primary))
                    } else if self.db.has_promotable(None) {
                        Some(None)
                    } else {
                        None
                    };
                    match zone {
                        Some(z) => {
                            self.promote_zone = z;
                            self.after(self.db.monitor.promotion_step_ms, Ev::Promote);
                        }
                        None => {
                            self.db.mark_exhausted();
                            self.note("db_error", json!("no slave available"));
                        }
                    }
                }
            }
            MonitorVerdict::Suspect(n) => self.note("monitor", json!(format!("suspect({n})"))),
            MonitorVerdict::Healthy | MonitorVerdict::Busy => {}
        }
        self.after(self.db.monitor.check_interval_ms, Ev::MonitorTick);
    }

    fn on_promote(&mut self) {
        let now = self.now();
        match self.db.failover(now, self.promote_zone) {
            Ok(rec) => {
                self.note("promoted", json!(rec.promoted));
                self.note("lost_transactions", json!(rec.lost_transactions));
                self.failovers.push(rec);
                for a in self.db.repoint_slaves(now) {
                    self.at(a.at, Ev::Apply(a));
                }
                self.db.resume_monitoring();
            }
            Err(e) => {
                self.db.mark_exhausted();
                self.note("db_error", json!(e.to_string()));
            }
        }
    }

    // ---- faults -------------------------------------------------------

    fn on_fault(&mut self, f: FaultKind) {
        match f {
            FaultKind::NodeCrash(id) => self.take_down(&id, false),
            FaultKind::DataCorruption(id) => self.corrupt(&id),
            FaultKind::NodeRecover(id) => self.recover_node(&id),
            FaultKind::ZoneOutage(z) => self.zone_outage(z),
            FaultKind::ZoneRecover(z) => self.zone_recover(z),
            FaultKind::LinkDown { duration_ms } => self.link_down(duration_ms),
        }
    }

    fn take_down(&mut self, id: &str, corrupted: bool) {
        let Some(c) = self.topo.container_mut(id) else {
            return;
        };
        if c.state == RunState::Down && c.corrupted == corrupted {
            return;
        }
        c.state = RunState::Down;
        c.corrupted |= corrupted;
        let role = c.spec.role;
        if role == Role::WebServer {
            self.fail_in_flight(id);
            self.maybe_finish_drain(id);
        }
    }

    fn corrupt(&mut self, id: &str) {
        let now = self.now();
        let Some(c) = self.topo.container(id) else {
            return;
        };
        if c.corrupted {
            return;
        }
        let zone = self.topo.zone_of(id).expect("known container");
        let startup = c.spec.startup_delay_ms;
        self.take_down(id, true);
        if self.topo.zone(zone).mode == ZoneMode::Failed {
            return;
        }
        // Rebuild from the latest snapshot: restart plus restore.
        let restore = self.params.restore_ms(self.cfg.storage.snapshot_size_mib);
        let up_at = now.plus(startup + restore);
        if let Some(c) = self.topo.container_mut(id) {
            c.state = RunState::Starting { up_at };
        }
        self.at(
            up_at,
            Ev::ContainerUp {
                id: id.to_string(),
                up_at,
            },
        );
    }

    fn recover_node(&mut self, id: &str) {
        let now = self.now();
        let Some(c) = self.topo.container(id) else {
            return;
        };
        if c.state != RunState::Down || c.retired {
            return;
        }
        let corrupted = c.corrupted;
        if let Ok(mut up_at) = self.topo.start_container(id, now) {
            if corrupted {
                up_at = up_at.plus(self.params.restore_ms(self.cfg.storage.snapshot_size_mib));
                if let Some(c) = self.topo.container_mut(id) {
                    c.state = RunState::Starting { up_at };
                }
            }
            self.at(
                up_at,
                Ev::ContainerUp {
                    id: id.to_string(),
                    up_at,
                },
            );
        }
    }

    fn zone_outage(&mut self, z: ZoneId) {
        let now = self.now();
        if self.topo.zone(z).mode == ZoneMode::Failed {
            return;
        }
        if z == self.primary() && self.disaster.is_none() {
            let n = self.db.replicas().len();
            let as_of_at_failure = (0..n).map(|i| self.db.as_of(i, now)).collect();
            self.disaster = Some(Disaster {
                zone: z,
                target: z.other(),
                failure: now,
                detection: None,
                primary_lsn: self.db.master().map_or(Lsn(0), |m| m.lsn),
                as_of_at_failure,
                sm: FailoverStateMachine::default(),
                plan: None,
                restore_done: false,
                serve_scheduled: false,
            });
        }
        let ids: Vec<String> = self
            .topo
            .zone(z)
            .containers
            .iter()
            .map(|c| c.spec.id.clone())
            .collect();
        for id in ids {
            self.take_down(&id, false);
        }
        self.topo.zone_mut(z).mode = ZoneMode::Failed;
    }

    fn zone_recover(&mut self, z: ZoneId) {
        let now = self.now();
        if self.topo.zone(z).mode != ZoneMode::Failed {
            return;
        }
        let is_primary = z == self.primary();
        let run = is_primary || self.mode.posture().containers_running();
        if !run {
            self.topo.zone_mut(z).mode = ZoneMode::Idle;
            self.detach_zone_db(z);
            return;
        }
        self.topo.zone_mut(z).mode = ZoneMode::Active;
        let ids: Vec<String> = self
            .topo
            .zone(z)
            .containers
            .iter()
            .filter(|c| !c.retired)
            .map(|c| c.spec.id.clone())
            .collect();
        for id in ids {
            if let Ok(up_at) = self.topo.start_container(&id, now) {
                self.at(up_at, Ev::ContainerUp { id, up_at });
            }
        }
    }

    fn detach_zone_db(&mut self, z: ZoneId) {
        for i in 0..self.db.replicas().len() {
            let r = self.db.replica(i);
            if r.zone == z && r.role == DbRole::Slave {
                self.db.detach(i);
            }
        }
    }

    fn link_down(&mut self, duration_ms: u64) {
        let until = self.now().plus(duration_ms);
        if self.topo.link.is_up() {
            self.topo.link.state = LinkState::Down;
            self.catalog.interrupt();
        }
        if until > self.link_down_until {
            self.link_down_until = until;
            self.at(until, Ev::LinkUp);
        }
    }

    fn on_link_up(&mut self) {
        if self.now() < self.link_down_until || self.topo.link.is_up() {
            return;
        }
        self.topo.link.state = LinkState::Up;
    }

    fn on_container_up(&mut self, id: &str, up_at: SimTime) {
        let now = self.now();
        if !self.topo.finish_start(id, up_at) {
            return;
        }
        let was_corrupted = self.topo.container(id).is_some_and(|c| c.corrupted);
        if let Some(c) = self.topo.container_mut(id) {
            c.corrupted = false;
        }
        let zone = self.topo.zone_of(id).expect("known container");
        let role = self.topo.container(id).expect("known").spec.role;
        if role.is_db() {
            if let Some(idx) = self.db.index_of(id) {
                if was_corrupted {
                    let (mut lsn, mut as_of) = self
                        .catalog
                        .latest()
                        .map_or((Lsn(0), SimTime::ZERO), |s| (s.data_lsn, s.taken_at));
                    // A restored master resyncs from a newer live peer.
                    if self.db.master_index() == Some(idx) {
                        let peer = self
                            .db
                            .replicas()
                            .iter()
                            .enumerate()
                            .filter(|(i, r)| *i != idx && r.up && !r.detached)
                            .map(|(i, r)| (r.lsn, self.db.as_of(i, now)))
                            .max();
                        if let Some((p, at)) = peer.filter(|p| p.0 > lsn) {
                            (lsn, as_of) = (p, at);
                        }
                    }
                    self.db.restore(idx, lsn, as_of);
                }
                // A zone back as standby under a cold posture rejoins
                // only through a later recovery.
                let cold = zone != self.primary() && !self.mode.posture().containers_running();
                if !cold && self.db.replica(idx).detached {
                    let m = self.db.master().map_or(Lsn(0), |m| m.lsn);
                    self.db
                        .restore(idx, Lsn(m.0.min(self.db.replica(idx).lsn.0)), now);
                }
            }
        }
        if role == Role::WebServer {
            if self.balancer.find(id).is_none() {
                let w = self
                    .balancer
                    .policy
                    .weight_for(balancer_len(&self.balancer));
                let _ = self.balancer.register_backend(zone, id, w, false);
            }
            if let Some(v) = &mut self.volumes[zone.index()] {
                v.allow(id);
                let _ = v.mount(id);
            }
        }
        self.dr_progress();
    }

    // ---- backups ------------------------------------------------------

    fn on_backup_tick(&mut self) {
        let now = self.now();
        let src = self.primary();
        let dest = src.other();
        let readable = self.topo.zone(src).mode == ZoneMode::Active && self.db.write_available();
        let dest_ok = self.topo.zone(dest).mode != ZoneMode::Failed;
        let lsn = self.db.master().map_or(Lsn(0), |m| m.lsn);
        let size = self.cfg.storage.snapshot_size_mib;
        match self
            .catalog
            .backup_tick(now, &self.topo.link, readable, lsn, size, dest)
        {
            Ok(ship) if dest_ok => {
                self.backups.taken += 1;
                self.note(
                    "snapshot",
                    json!({"lsn": lsn, "arrives_at": ship.arrives_at}),
                );
                self.at(ship.arrives_at, Ev::ShipmentArrive(ship));
            }
            Ok(_) => {
                self.backups.skipped += 1;
                self.note("snapshot_skipped", json!("standby zone failed"));
            }
            Err(e) => {
                self.backups.skipped += 1;
                self.note("snapshot_skipped", json!(e.to_string()));
            }
        }
        if let Some(c) = self.params.backup_cadence_ms {
            self.after(c, Ev::BackupTick);
        }
    }

    // ---- disaster recovery ----------------------------------------------

    fn detect(&mut self) {
        let now = self.now();
        let plan = plan_recovery(self.mode, &self.params);
        let Some(d) = &mut self.disaster else { return };
        d.detection = Some(now);
        let _ = d.sm.advance(FailoverState::Detected, now);
        d.plan = Some(plan);
        let (target, zone, failure) = (d.target, d.zone, d.failure);
        self.note("dr", json!({"detected": zone, "target": target}));
        if self.topo.zone(target).mode == ZoneMode::Failed {
            self.unrecovered.push(format!(
                "zone {zone} failure at {failure}: standby unavailable"
            ));
            self.note("dr_error", json!("standby unavailable"));
            return;
        }
        self.after(plan.wait_ms, Ev::Dr(DrStep::Activate));
    }

    fn on_dr(&mut self, step: DrStep) {
        let now = self.now();
        let Some(d) = &mut self.disaster else { return };
        let target = d.target;
        let plan = d.plan.expect("planned at detection");
        match step {
            DrStep::Activate => {
                if self.topo.zone(target).mode == ZoneMode::Failed {
                    self.unrecovered.push(format!(
                        "zone {} failure at {}: standby unavailable",
                        d.zone, d.failure
                    ));
                    return;
                }
                let _ = d.sm.advance(FailoverState::Activating, now);
                if plan.activate {
                    self.topo.zone_mut(target).mode = ZoneMode::Activating;
                    let ids: Vec<String> = self
                        .topo
                        .zone(target)
                        .containers
                        .iter()
                        .filter(|c| !c.retired && c.state == RunState::Down)
                        .map(|c| c.spec.id.clone())
                        .collect();
                    for id in ids {
                        if let Ok(up_at) = self.topo.start_container(&id, now) {
                            self.at(up_at, Ev::ContainerUp { id, up_at });
                        }
                    }
                    self.dr_progress();
                } else {
                    d.restore_done = true;
                    self.dr_progress();
                }
            }
            DrStep::RestoreDone => {
                d.restore_done = true;
                self.dr_progress();
            }
            DrStep::Serve => self.serve(),
        }
    }

    fn zone_role_all_serving(&self, z: ZoneId, data_only: bool) -> bool {
        self.topo
            .zone(z)
            .containers
            .iter()
            .filter(|c| !c.retired && (!data_only || c.spec.role.holds_data()))
            .all(|c| c.serving())
    }

    /// Advance an activating recovery as containers come up.
    fn dr_progress(&mut self) {
        let now = self.now();
        let Some(d) = &self.disaster else { return };
        let Some(plan) = d.plan else { return };
        if d.serve_scheduled {
            return;
        }
        let target = d.target;
        if !plan.activate {
            // Running standby: serve once a restarted zone is fully up.
            if d.sm.state == FailoverState::Activating && self.zone_role_all_serving(target, false)
            {
                self.disaster.as_mut().expect("checked").serve_scheduled = true;
                self.after(plan.redirect_delay_ms, Ev::Dr(DrStep::Serve));
            }
            return;
        }
        match d.sm.state {
            FailoverState::Activating if self.zone_role_all_serving(target, true) => {
                let restore = if plan.restore {
                    self.catalog
                        .latest_at(target)
                        .map_or(0, |s| self.params.restore_ms(s.size_mib))
                } else {
                    0
                };
                let d = self.disaster.as_mut().expect("checked");
                let _ = d.sm.advance(FailoverState::Restoring, now);
                self.after(restore, Ev::Dr(DrStep::RestoreDone));
            }
            FailoverState::Restoring
                if d.restore_done && self.zone_role_all_serving(target, false) =>
            {
                let delay = plan.redirect_delay_ms;
                self.disaster.as_mut().expect("checked").serve_scheduled = true;
                self.after(delay, Ev::Dr(DrStep::Serve));
            }
            _ => {}
        }
    }

    fn serve(&mut self) {
        let now = self.now();
        let Some(d) = self.disaster.take() else {
            return;
        };
        let target = d.target;
        let old = d.zone;
        let plan = d.plan.expect("planned");
        // The surviving zone takes over first, so its replicas are judged
        // reachable from where the service now lives.
        self.topo.zone_mut(target).role = ZoneRole::Primary;
        self.topo.zone_mut(target).mode = ZoneMode::Active;
        self.topo.zone_mut(old).role = ZoneRole::Standby;
        self.sync_derived(now);
        let (standby_lsn, sync_point) = if plan.restore {
            let snap = self.catalog.latest_at(target).copied();
            let (lsn, as_of) = snap.map_or((Lsn(0), SimTime::ZERO), |s| (s.data_lsn, s.taken_at));
            let idxs: Vec<usize> = (0..self.db.replicas().len())
                .filter(|&i| self.db.replica(i).zone == target)
                .collect();
            for &i in &idxs {
                self.db.restore(i, lsn, as_of);
            }
            let master = idxs
                .iter()
                .copied()
                .find(|&i| {
                    self.topo
                        .container(&self.db.replica(i).container)
                        .is_some_and(|c| c.spec.role == Role::DbMaster)
                })
                .or_else(|| idxs.first().copied());
            if let Some(m) = master {
                self.db.install_master(m);
            }
            self.ensure_volume(target);
            (lsn, as_of)
        } else {
            match self.db.failover(now, Some(target)) {
                Ok(rec) => {
                    let idx = self.db.master_index().expect("just promoted");
                    let sp = d
                        .as_of_at_failure
                        .get(idx)
                        .copied()
                        .unwrap_or(SimTime::ZERO);
                    self.failovers.push(rec);
                    (self.db.replica(idx).lsn, sp)
                }
                Err(e) => {
                    self.note("db_error", json!(e.to_string()));
                    (Lsn(0), SimTime::ZERO)
                }
            }
        };
        let _ = redirect_traffic(&mut self.routing, target, true);
        self.detach_zone_db(old);
        for a in self.db.repoint_slaves(now) {
            self.at(a.at, Ev::Apply(a));
        }
        self.db.resume_monitoring();
        let mut sm = d.sm;
        let _ = sm.advance(FailoverState::Serving, now);
        let record = RecoveryRecord::compute(
            self.mode,
            old,
            d.failure,
            d.detection.unwrap_or(now),
            now,
            d.primary_lsn,
            standby_lsn,
            sync_point,
            sm.history,
        );
        self.note(
            "recovery",
            serde_json::to_value(&record).expect("serializes"),
        );
        self.records.push(record);
    }

    // ---- autoscaling --------------------------------------------------

    fn web_nodes(&self) -> u32 {
        let z = self.primary();
        self.topo
            .zone(z)
            .with_role(Role::WebServer)
            .filter(|c| !c.retired && c.state != RunState::Down)
            .filter(|c| {
                self.balancer
                    .find(&c.spec.id)
                    .is_none_or(|(_, b)| !b.draining)
            })
            .count() as u32
    }

    fn on_scale_eval(&mut self) {
        let now = self.now();
        let Some(mut scaler) = self.autoscaler.take() else {
            return;
        };
        let routable = self.routing.routable.clone();
        let eligible = self.balancer.eligible_count(&routable);
        let metric = if eligible == 0 {
            0.0
        } else {
            self.balancer.outstanding_total(&routable) as f64 / eligible as f64
        };
        let nodes = self.web_nodes();
        let previous = scaler.last_action();
        let decision = scaler.evaluate(now, metric, nodes);
        self.scale_samples.push(ScaleSample {
            time: now,
            metric,
            nodes,
        });
        let interval = scaler.policy.evaluation_interval_ms;
        let (min, max) = (scaler.policy.min_nodes, scaler.policy.max_nodes);
        if decision != ScaleDecision::Hold {
            let zone = self.primary();
            let applied = self.topo.zone(zone).mode == ZoneMode::Active;
            let containers = if applied {
                self.apply_scale(decision)
            } else {
                scaler.forget_last_action(previous);
                Vec::new()
            };
            let after = self.web_nodes();
            if applied && (after > max || after < min.min(nodes)) {
                self.violations
                    .push(format!("{now}: node count {after} outside [{min}, {max}]"));
            }
            self.note("metric", json!(metric));
            self.note(
                "decision",
                serde_json::to_value(decision).expect("serializes"),
            );
            if !applied {
                self.note("scale_error", json!(format!("zone {zone} unavailable")));
            }
            self.scale_actions.push(ScaleAction {
                time: now,
                decision,
                nodes_after: after,
                containers,
                applied,
            });
        }
        self.autoscaler = Some(scaler);
        self.after(interval, Ev::ScaleEval);
    }

    fn apply_scale(&mut self, decision: ScaleDecision) -> Vec<String> {
        let now = self.now();
        let zone = self.primary();
        let mut touched = Vec::new();
        match decision {
            ScaleDecision::ScaleOut(n) => {
                let template = self
                    .topo
                    .zone(zone)
                    .with_role(Role::WebServer)
                    .next()
                    .map(|c| c.spec.clone())
                    .unwrap_or_else(|| ContainerSpec::new("web", Role::WebServer));
                for _ in 0..n {
                    self.auto_counter += 1;
                    let id = format!("web-auto-{}", self.auto_counter);
                    let spec = ContainerSpec {
                        id: id.clone(),
                        ..template.clone()
                    };
                    if self.topo.add_container(zone, spec).is_err() {
                        continue;
                    }
                    if let Ok(up_at) = self.topo.start_container(&id, now) {
                        self.at(
                            up_at,
                            Ev::ContainerUp {
                                id: id.clone(),
                                up_at,
                            },
                        );
                    }
                    touched.push(id);
                }
            }
            ScaleDecision::ScaleIn(n) => {
                for _ in 0..n {
                    let victim = self.balancer.pool(zone).and_then(|p| {
                        p.backends()
                            .iter()
                            .filter(|b| !b.draining)
                            .max_by_key(|b| b.registration_index)
                            .map(|b| b.container.clone())
                    });
                    let Some(v) = victim else { break };
                    let _ = self.balancer.drain(&v);
                    touched.push(v.clone());
                    self.maybe_finish_drain(&v);
                }
            }
            ScaleDecision::Hold => {}
        }
        touched
    }

    /// Stop a drained node once its last request is done.
    fn maybe_finish_drain(&mut self, container: &str) {
        let done = self
            .balancer
            .find(container)
            .is_some_and(|(_, b)| b.draining && b.outstanding == 0);
        if !done {
            return;
        }
        let _ = self.balancer.deregister(container);
        if let Some(c) = self.topo.container_mut(container) {
            c.state = RunState::Down;
            c.retired = true;
        }
        self.note("retired", json!(container));
    }

    // ---- report -------------------------------------------------------

    fn finish(mut self) -> RunOutput {
        let end = self.end;
        let in_flight = self.inflight.len() as u64;
        if in_flight > 0 {
            *self.outcomes.entry("in_flight_at_end".into()).or_default() += in_flight;
        }
        let outstanding: u64 = self
            .balancer
            .pools()
            .flat_map(|(_, p)| p.backends().iter())
            .map(|b| b.outstanding as u64)
            .sum();
        if outstanding != in_flight {
            self.violations.push(format!(
                "outstanding {outstanding} != in-flight {in_flight} at end"
            ));
        }
        let counted: u64 = self.outcomes.values().sum();
        if counted != self.total_requests {
            self.violations.push(format!(
                "outcomes {counted} != requests {}",
                self.total_requests
            ));
        }
        let dispatched: u64 = self.per_backend.values().sum();
        if dispatched + self.failed_before_dispatch != self.total_requests {
            self.violations.push(format!(
                "dispatched {dispatched} + undispatched {} != requests {}",
                self.failed_before_dispatch, self.total_requests
            ));
        }
        if let Some(d) = &self.disaster {
            self.unrecovered.push(format!(
                "zone {} failure at {} not recovered by end of run",
                d.zone, d.failure
            ));
            self.unrecovered.dedup();
        }
        let availability = self.tracker.finish(end);
        let sla = sla_verdict(self.cfg.sla, availability.overall_percent);
        let mut recovery = measure_rto_rpo(&self.records);
        recovery.unrecovered = self.unrecovered;
        if !recovery.unrecovered.is_empty() {
            recovery.verdict = "fail".into();
        }
        let succeeded = self.outcomes.get("success").copied().unwrap_or(0);
        let report = RunReport {
            scenario: self.cfg.name.clone(),
            scenario_digest: self.cfg.digest(),
            seed: self.seed,
            mode: self.mode,
            duration_ms: end.0,
            availability,
            sla,
            recovery,
            requests: RequestStats {
                total: self.total_requests,
                succeeded,
                failed_before_dispatch: self.failed_before_dispatch,
                outcomes: self.outcomes,
                per_backend: self.per_backend,
            },
            scale_actions: self.scale_actions,
            scale_samples: self.scale_samples,
            db: DbStats {
                commits: self.commits,
                failovers: self.failovers,
                final_master: self.db.master().map(|m| m.container.clone()),
            },
            backups: self.backups,
            events_processed: self.events,
            invariant_violations: self.violations,
            meta: ReportMeta {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                wall_clock_ms: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map_or(0, |d| d.as_millis() as u64),
            },
        };
        RunOutput {
            report,
            trace: self.trace,
        }
    }
}

fn balancer_len(b: &Balancer) -> usize {
    b.pools().map(|(_, p)| p.len()).sum()
}
