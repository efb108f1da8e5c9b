//! Master/slave database model: read-write split routing, LSN-granular
//! replication, the failure monitor, failover and switchover.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;
use crate::topology::ZoneId;

/// Commit sequence number.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Lsn(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbRole {
    Master,
    Slave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    #[default]
    Async,
    Sync,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub check_interval_ms: u64,
    pub failures_before_failover: u32,
    /// First probe fires at this offset; later ones every interval.
    pub probe_offset_ms: u64,
    /// Time from failover trigger until the new master accepts writes.
    pub promotion_step_ms: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            check_interval_ms: 1000,
            failures_before_failover: 3,
            probe_offset_ms: 500,
            promotion_step_ms: 1000,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.check_interval_ms == 0 {
            return Err("monitor check interval must be > 0".into());
        }
        if self.failures_before_failover == 0 {
            return Err("failures_before_failover must be >= 1".into());
        }
        Ok(())
    }

    pub fn first_probe(&self) -> SimTime {
        SimTime(if self.probe_offset_ms == 0 {
            self.check_interval_ms
        } else {
            self.probe_offset_ms
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DbReplica {
    pub container: String,
    pub zone: ZoneId,
    pub role: DbRole,
    pub lsn: Lsn,
    /// Serving and reachable from the router.
    pub up: bool,
    pub replication_delay_ms: u64,
    pub sync: SyncMode,
    /// Primary-side time up to which this replica holds every commit.
    pub synced_as_of: SimTime,
    /// Not yet part of replication (cold standby before restore).
    pub detached: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DbError {
    #[error("no master available for writes")]
    NoMaster,
    #[error("no replica available for reads")]
    NoReplica,
    #[error("no slave available for promotion")]
    NoSlaveAvailable,
    #[error("switchover target {0} is down")]
    TargetDown(String),
    #[error("unknown replica {0}")]
    UnknownReplica(String),
}

/// Replication delivery the caller must schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingApply {
    pub replica: usize,
    pub at: SimTime,
    pub lsn: Lsn,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Commit {
    pub lsn: Lsn,
    pub applies: Vec<PendingApply>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorVerdict {
    Healthy,
    Suspect(u32),
    /// Threshold reached on this probe.
    MasterFailed,
    /// Already acting on a failure; probe ignored.
    Busy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromotionRecord {
    pub old_master: String,
    pub promoted: String,
    pub old_master_lsn: Lsn,
    pub promoted_lsn: Lsn,
    pub lost_transactions: u64,
    pub promoted_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchoverRecord {
    pub old_master: String,
    pub new_master: String,
    pub started_at: SimTime,
    pub completed_at: SimTime,
    pub lost_transactions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MonitorState {
    Watching,
    /// Failure acted on (failover running or handed to zone recovery).
    Acting,
    /// Threshold hit with nobody to promote; waits for the master to return.
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct DbCluster {
    replicas: Vec<DbReplica>,
    master: Option<usize>,
    read_cursor: usize,
    pub exclude_master_reads: bool,
    pub monitor: MonitorConfig,
    consecutive_failures: u32,
    state: MonitorState,
    epoch: u64,
}

impl DbCluster {
    pub fn new(monitor: MonitorConfig) -> Self {
        Self {
            replicas: Vec::new(),
            master: None,
            read_cursor: 0,
            exclude_master_reads: false,
            monitor,
            consecutive_failures: 0,
            state: MonitorState::Watching,
            epoch: 0,
        }
    }

    /// Register a replica in registration order. The first master added
    /// becomes the cluster master; a later one joins as a slave.
    pub fn add_replica(
        &mut self,
        container: &str,
        zone: ZoneId,
        wants_master: bool,
        up: bool,
        replication_delay_ms: u64,
        sync: SyncMode,
    ) -> usize {
        let role = if wants_master && self.master.is_none() {
            DbRole::Master
        } else {
            DbRole::Slave
        };
        self.replicas.push(DbReplica {
            container: container.to_string(),
            zone,
            role,
            lsn: Lsn(0),
            up,
            replication_delay_ms,
            sync,
            synced_as_of: SimTime::ZERO,
            detached: false,
        });
        let idx = self.replicas.len() - 1;
        if role == DbRole::Master {
            self.master = Some(idx);
        }
        idx
    }

    pub fn replicas(&self) -> &[DbReplica] {
        &self.replicas
    }

    pub fn replica(&self, idx: usize) -> &DbReplica {
        &self.replicas[idx]
    }

    pub fn replica_mut(&mut self, idx: usize) -> &mut DbReplica {
        &mut self.replicas[idx]
    }

    pub fn index_of(&self, container: &str) -> Option<usize> {
        self.replicas.iter().position(|r| r.container == container)
    }

    pub fn master(&self) -> Option<&DbReplica> {
        self.master.map(|i| &self.replicas[i])
    }

    pub fn master_index(&self) -> Option<usize> {
        self.master
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn write_available(&self) -> bool {
        self.master().is_some_and(|m| m.up)
    }

    pub fn read_available(&self) -> bool {
        self.replicas.iter().any(|r| r.up && !r.detached)
    }

    fn live_master(&self) -> Option<usize> {
        self.master.filter(|&i| self.replicas[i].up)
    }

    /// Read-write split: writes to the master, reads round-robin over up
    /// replicas (the master included unless excluded and a slave is up).
    pub fn route_query(&mut self, kind: QueryKind) -> Result<usize, DbError> {
        match kind {
            QueryKind::Write => self.live_master().ok_or(DbError::NoMaster),
            QueryKind::Read => {
                let slave_up = self
                    .replicas
                    .iter()
                    .any(|r| r.up && !r.detached && r.role == DbRole::Slave);
                let skip_master = self.exclude_master_reads && slave_up;
                let n = self.replicas.len();
                for step in 0..n {
                    let i = (self.read_cursor + step) % n;
                    let r = &self.replicas[i];
                    if r.up && !r.detached && !(skip_master && r.role == DbRole::Master) {
                        self.read_cursor = (i + 1) % n;
                        return Ok(i);
                    }
                }
                Err(DbError::NoReplica)
            }
        }
    }

    /// Commit one write on the master. Sync slaves hold the new LSN before
    /// this returns; async slaves get a delivery to schedule.
    pub fn commit(&mut self, now: SimTime) -> Result<Commit, DbError> {
        let m = self.live_master().ok_or(DbError::NoMaster)?;
        self.replicas[m].lsn.0 += 1;
        let lsn = self.replicas[m].lsn;
        self.replicas[m].synced_as_of = now;
        let mut applies = Vec::new();
        for (i, r) in self.replicas.iter_mut().enumerate() {
            if i == m || r.role != DbRole::Slave || !r.up || r.detached {
                continue;
            }
            match r.sync {
                SyncMode::Sync => {
                    r.lsn = lsn;
                    r.synced_as_of = now;
                }
                SyncMode::Async => applies.push(PendingApply {
                    replica: i,
                    at: now.plus(r.replication_delay_ms),
                    lsn,
                    epoch: self.epoch,
                }),
            }
        }
        Ok(Commit { lsn, applies })
    }

    /// Deliver replicated state to a slave. Stale epochs are dropped.
    pub fn replicate_apply(&mut self, apply: PendingApply, now: SimTime) -> bool {
        if apply.epoch != self.epoch {
            return false;
        }
        let r = &mut self.replicas[apply.replica];
        if !r.up || r.detached || r.role != DbRole::Slave {
            return false;
        }
        if apply.lsn > r.lsn {
            r.lsn = apply.lsn;
        }
        let as_of = SimTime(now.0.saturating_sub(r.replication_delay_ms));
        r.synced_as_of = r.synced_as_of.max(as_of);
        true
    }

    /// Primary-side time this replica is current to, at `now`.
    pub fn as_of(&self, idx: usize, now: SimTime) -> SimTime {
        let r = &self.replicas[idx];
        if Some(idx) == self.master {
            return if r.up { now } else { r.synced_as_of };
        }
        if !r.up || r.detached {
            return r.synced_as_of;
        }
        match r.sync {
            SyncMode::Sync => now,
            SyncMode::Async => {
                SimTime(now.0.saturating_sub(r.replication_delay_ms)).max(r.synced_as_of)
            }
        }
    }

    /// Mark a replica reachable or not. Going down freezes its sync point;
    /// coming back returns the catch-up delivery to schedule, if any.
    pub fn set_up(&mut self, idx: usize, up: bool, now: SimTime) -> Option<PendingApply> {
        if self.replicas[idx].up == up {
            return None;
        }
        if !up {
            let as_of = self.as_of(idx, now);
            let r = &mut self.replicas[idx];
            r.synced_as_of = as_of;
            r.up = false;
            return None;
        }
        self.replicas[idx].up = true;
        self.catch_up(idx, now)
    }

    fn catch_up(&mut self, idx: usize, now: SimTime) -> Option<PendingApply> {
        let m = self.master?;
        let master_lsn = self.replicas[m].lsn;
        let master_up = self.replicas[m].up;
        let epoch = self.epoch;
        let r = &mut self.replicas[idx];
        if idx == m || r.role != DbRole::Slave || r.detached || !r.up {
            return None;
        }
        // A returning node may hold commits the current master never saw.
        if r.lsn > master_lsn {
            r.lsn = master_lsn;
        }
        if !master_up {
            return None;
        }
        match r.sync {
            SyncMode::Sync => {
                r.lsn = master_lsn;
                r.synced_as_of = now;
                None
            }
            SyncMode::Async => Some(PendingApply {
                replica: idx,
                at: now.plus(r.replication_delay_ms),
                lsn: master_lsn,
                epoch,
            }),
        }
    }

    /// One monitor probe of the current master.
    pub fn monitor_probe(&mut self) -> MonitorVerdict {
        let master_ok = self.live_master().is_some();
        match self.state {
            MonitorState::Acting => return MonitorVerdict::Busy,
            MonitorState::Exhausted => {
                if master_ok {
                    self.state = MonitorState::Watching;
                    self.consecutive_failures = 0;
                    return MonitorVerdict::Healthy;
                }
                return MonitorVerdict::Busy;
            }
            MonitorState::Watching => {}
        }
        if master_ok {
            self.consecutive_failures = 0;
            return MonitorVerdict::Healthy;
        }
        self.consecutive_failures += 1;
        if self.consecutive_failures >= self.monitor.failures_before_failover {
            self.state = MonitorState::Acting;
            MonitorVerdict::MasterFailed
        } else {
            MonitorVerdict::Suspect(self.consecutive_failures)
        }
    }

    /// Give up on promotion; writes stay down until the master returns.
    pub fn mark_exhausted(&mut self) {
        self.state = MonitorState::Exhausted;
    }

    /// Resume watching after a failover or zone recovery completes.
    pub fn resume_monitoring(&mut self) {
        self.state = MonitorState::Watching;
        self.consecutive_failures = 0;
    }

    pub fn has_promotable(&self, zone: Option<ZoneId>) -> bool {
        self.promotion_candidate(zone).is_some()
    }

    fn promotion_candidate(&self, zone: Option<ZoneId>) -> Option<usize> {
        self.replicas
            .iter()
            .enumerate()
            .filter(|(i, r)| {
                Some(*i) != self.master
                    && r.up
                    && !r.detached
                    && r.role == DbRole::Slave
                    && zone.is_none_or(|z| r.zone == z)
            })
            // highest lsn, then lowest registration index
            .max_by(|(i, a), (j, b)| a.lsn.cmp(&b.lsn).then(j.cmp(i)))
            .map(|(i, _)| i)
    }

    /// Promote the most up-to-date up slave (optionally restricted to one
    /// zone). Remaining slaves re-point to it.
    pub fn failover(
        &mut self,
        now: SimTime,
        zone: Option<ZoneId>,
    ) -> Result<PromotionRecord, DbError> {
        let new = self
            .promotion_candidate(zone)
            .ok_or(DbError::NoSlaveAvailable)?;
        let (old_name, old_lsn) = match self.master {
            Some(m) => {
                self.replicas[m].role = DbRole::Slave;
                (self.replicas[m].container.clone(), self.replicas[m].lsn)
            }
            None => (String::new(), Lsn(0)),
        };
        self.replicas[new].role = DbRole::Master;
        self.master = Some(new);
        self.epoch += 1;
        let promoted_lsn = self.replicas[new].lsn;
        Ok(PromotionRecord {
            old_master: old_name,
            promoted: self.replicas[new].container.clone(),
            old_master_lsn: old_lsn,
            promoted_lsn,
            lost_transactions: old_lsn.0.saturating_sub(promoted_lsn.0),
            promoted_at: now,
        })
    }

    /// Catch-up deliveries for every up slave after a master change.
    pub fn repoint_slaves(&mut self, now: SimTime) -> Vec<PendingApply> {
        (0..self.replicas.len())
            .filter_map(|i| self.catch_up(i, now))
            .collect()
    }

    /// Planned, lossless role swap. Writes pause while the target catches
    /// up, which takes at most its replication delay.
    pub fn switchover(&mut self, target: &str, now: SimTime) -> Result<SwitchoverRecord, DbError> {
        let t = self
            .index_of(target)
            .ok_or_else(|| DbError::UnknownReplica(target.to_string()))?;
        let m = self.live_master().ok_or(DbError::NoMaster)?;
        if !self.replicas[t].up || self.replicas[t].detached {
            return Err(DbError::TargetDown(target.to_string()));
        }
        let master_lsn = self.replicas[m].lsn;
        let pause = if self.replicas[t].lsn < master_lsn {
            self.replicas[t].replication_delay_ms
        } else {
            0
        };
        let done = now.plus(pause);
        self.replicas[t].lsn = master_lsn;
        self.replicas[t].synced_as_of = done;
        self.replicas[t].role = DbRole::Master;
        self.replicas[m].role = DbRole::Slave;
        self.master = Some(t);
        self.epoch += 1;
        Ok(SwitchoverRecord {
            old_master: self.replicas[m].container.clone(),
            new_master: target.to_string(),
            started_at: now,
            completed_at: done,
            lost_transactions: 0,
        })
    }

    /// Install restored state on a replica and attach it to replication.
    pub fn restore(&mut self, idx: usize, lsn: Lsn, as_of: SimTime) {
        let r = &mut self.replicas[idx];
        r.lsn = lsn;
        r.synced_as_of = as_of;
        r.detached = false;
    }

    /// Make `idx` the master outright (zone recovery after restore).
    pub fn install_master(&mut self, idx: usize) {
        if let Some(m) = self.master {
            self.replicas[m].role = DbRole::Slave;
        }
        self.replicas[idx].role = DbRole::Master;
        self.master = Some(idx);
        self.epoch += 1;
    }

    pub fn detach(&mut self, idx: usize) {
        self.replicas[idx].detached = true;
    }

    /// Count of replicas currently holding the master role.
    pub fn master_count(&self) -> usize {
        self.replicas
            .iter()
            .filter(|r| r.role == DbRole::Master)
            .count()
    }

    /// Async bound: every attached up slave trails or equals the master.
    pub fn lsn_bound_holds(&self) -> bool {
        let Some(m) = self.master() else { return true };
        self.replicas
            .iter()
            .filter(|r| r.role == DbRole::Slave && r.up && !r.detached)
            .all(|r| r.lsn <= m.lsn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(slaves: usize, sync: SyncMode) -> DbCluster {
        let mut c = DbCluster::new(MonitorConfig {
            probe_offset_ms: 0,
            ..MonitorConfig::default()
        });
        c.add_replica("M", ZoneId::A, true, true, 500, sync);
        for i in 1..=slaves {
            c.add_replica(&format!("S{i}"), ZoneId::A, false, true, 500, sync);
        }
        c
    }

    #[test]
    fn reads_round_robin_over_all() {
        let mut c = cluster(2, SyncMode::Async);
        let mut counts = [0; 3];
        for _ in 0..6 {
            counts[c.route_query(QueryKind::Read).unwrap()] += 1;
        }
        assert_eq!(counts, [2, 2, 2]);
    }

    #[test]
    fn exclude_master_reads_flag() {
        let mut c = cluster(2, SyncMode::Async);
        c.exclude_master_reads = true;
        for _ in 0..4 {
            assert_ne!(c.route_query(QueryKind::Read).unwrap(), 0);
        }
    }

    #[test]
    fn write_without_master() {
        let mut c = cluster(1, SyncMode::Async);
        c.set_up(0, false, SimTime(10));
        assert_eq!(c.route_query(QueryKind::Write), Err(DbError::NoMaster));
        assert_eq!(c.commit(SimTime(10)), Err(DbError::NoMaster));
        assert_eq!(c.route_query(QueryKind::Read), Ok(1));
    }

    #[test]
    fn write_bumps_master_lsn() {
        let mut c = cluster(1, SyncMode::Async);
        let commit = c.commit(SimTime(5)).unwrap();
        assert_eq!(commit.lsn, Lsn(1));
        assert_eq!(c.master().unwrap().lsn, Lsn(1));
        assert_eq!(c.replica(1).lsn, Lsn(0));
    }

    #[test]
    fn async_apply_after_delay() {
        let mut c = cluster(1, SyncMode::Async);
        let mut last = None;
        for _ in 0..10 {
            last = Some(c.commit(SimTime(1000)).unwrap());
        }
        let apply = last.unwrap().applies[0];
        assert_eq!(apply.at, SimTime(1500));
        assert_eq!(apply.lsn, Lsn(10));
        assert!(c.replicate_apply(apply, SimTime(1500)));
        assert_eq!(c.replica(1).lsn, Lsn(10));
        assert_eq!(c.replica(1).synced_as_of, SimTime(1000));
    }

    #[test]
    fn sync_keeps_slaves_equal() {
        let mut c = cluster(2, SyncMode::Sync);
        for t in 0..20 {
            let commit = c.commit(SimTime(t)).unwrap();
            assert!(commit.applies.is_empty());
            assert!(c.replicas().iter().all(|r| r.lsn == commit.lsn));
        }
    }

    fn crash_scenario(sync: SyncMode) -> DbCluster {
        // master reaches 100; S1 has applied 97, S2 has applied 99
        let mut c = cluster(2, sync);
        let mut pending = Vec::new();
        for t in 1..=100 {
            pending.extend(c.commit(SimTime(t)).unwrap().applies);
        }
        for a in pending {
            let upto = if a.replica == 1 { 97 } else { 99 };
            if a.lsn.0 <= upto {
                c.replicate_apply(a, a.at);
            }
        }
        c
    }

    #[test]
    fn failover_promotes_max_lsn() {
        let mut c = crash_scenario(SyncMode::Async);
        assert_eq!(c.replica(1).lsn, Lsn(97));
        assert_eq!(c.replica(2).lsn, Lsn(99));
        c.set_up(0, false, SimTime(200));
        let rec = c.failover(SimTime(200), None).unwrap();
        assert_eq!(rec.promoted, "S2");
        assert_eq!(rec.promoted_lsn, Lsn(99));
        assert_eq!(rec.lost_transactions, 1);
        assert_eq!(c.master_count(), 1);
        // S1 re-points and catches up to the new master
        let catch = c.repoint_slaves(SimTime(200));
        assert_eq!(catch.len(), 1);
        c.replicate_apply(catch[0], catch[0].at);
        assert_eq!(c.replica(1).lsn, Lsn(99));
    }

    #[test]
    fn sync_failover_loses_nothing() {
        let mut c = crash_scenario(SyncMode::Sync);
        c.set_up(0, false, SimTime(200));
        let rec = c.failover(SimTime(200), None).unwrap();
        assert_eq!(rec.lost_transactions, 0);
    }

    #[test]
    fn tie_goes_to_lower_registration() {
        let mut c = cluster(2, SyncMode::Sync);
        for t in 0..100 {
            c.commit(SimTime(t)).unwrap();
        }
        c.set_up(0, false, SimTime(100));
        assert_eq!(c.failover(SimTime(100), None).unwrap().promoted, "S1");
    }

    #[test]
    fn no_slave_available() {
        let mut c = cluster(0, SyncMode::Async);
        c.set_up(0, false, SimTime(0));
        assert_eq!(c.failover(SimTime(0), None), Err(DbError::NoSlaveAvailable));
    }

    #[test]
    fn monitor_probe_schedule() {
        // interval 1000, threshold 3, master crash at 10,500
        let mut c = cluster(1, SyncMode::Async);
        let mut t = c.monitor.first_probe();
        let crash = SimTime(10_500);
        let mut failed_at = None;
        while failed_at.is_none() {
            if t >= crash {
                c.set_up(0, false, crash);
            }
            if c.monitor_probe() == MonitorVerdict::MasterFailed {
                failed_at = Some(t);
            }
            t = t.plus(c.monitor.check_interval_ms);
        }
        assert_eq!(failed_at, Some(SimTime(13_000)));
        assert_eq!(failed_at.unwrap().since(crash), 2_500);
    }

    #[test]
    fn monitor_flap_resets() {
        let mut c = cluster(1, SyncMode::Async);
        c.set_up(0, false, SimTime(0));
        assert_eq!(c.monitor_probe(), MonitorVerdict::Suspect(1));
        c.set_up(0, true, SimTime(1));
        assert_eq!(c.monitor_probe(), MonitorVerdict::Healthy);
        c.set_up(0, false, SimTime(2));
        assert_eq!(c.monitor_probe(), MonitorVerdict::Suspect(1));
    }

    #[test]
    fn switchover_is_lossless() {
        let mut c = cluster(1, SyncMode::Async);
        for t in 0..5 {
            c.commit(SimTime(t)).unwrap();
        }
        let rec = c.switchover("S1", SimTime(10)).unwrap();
        assert_eq!(rec.lost_transactions, 0);
        assert!(rec.completed_at.since(rec.started_at) <= 500);
        assert_eq!(c.route_query(QueryKind::Write), Ok(1));
        assert_eq!(c.master().unwrap().lsn, Lsn(5));
    }

    #[test]
    fn switchover_target_down() {
        let mut c = cluster(1, SyncMode::Async);
        c.set_up(1, false, SimTime(0));
        assert_eq!(
            c.switchover("S1", SimTime(0)),
            Err(DbError::TargetDown("S1".into()))
        );
    }

    #[test]
    fn stale_epoch_dropped() {
        let mut c = cluster(2, SyncMode::Async);
        let commit = c.commit(SimTime(0)).unwrap();
        c.set_up(0, false, SimTime(1));
        c.failover(SimTime(1), None).unwrap();
        assert!(!c.replicate_apply(commit.applies[1], SimTime(500)));
    }

    #[test]
    fn returning_old_master_rewinds() {
        let mut c = crash_scenario(SyncMode::Async);
        c.set_up(0, false, SimTime(200));
        c.failover(SimTime(200), None).unwrap();
        let catch = c.set_up(0, true, SimTime(300)).unwrap();
        assert_eq!(c.replica(0).lsn, Lsn(99));
        assert_eq!(catch.lsn, Lsn(99));
        assert!(c.lsn_bound_holds());
    }

    #[test]
    fn async_as_of_freezes_when_down() {
        let mut c = cluster(1, SyncMode::Async);
        assert_eq!(c.as_of(1, SimTime(10_000)), SimTime(9_500));
        c.set_up(1, false, SimTime(10_000));
        assert_eq!(c.as_of(1, SimTime(60_000)), SimTime(9_500));
    }
}
