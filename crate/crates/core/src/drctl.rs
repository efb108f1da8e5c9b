//! Disaster-recovery modes and the zone failover state machine.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbcluster::{Lsn, SyncMode};
use crate::engine::SimTime;
use crate::topology::ZoneId;

pub const HOUR_MS: u64 = 3_600_000;
pub const DAY_MS: u64 = 24 * HOUR_MS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrMode {
    BackupAndRestore,
    PilotLight,
    WarmStandby,
    ActiveActive,
}

impl DrMode {
    /// Least to most protective.
    pub const ALL: [DrMode; 4] = [
        DrMode::BackupAndRestore,
        DrMode::PilotLight,
        DrMode::WarmStandby,
        DrMode::ActiveActive,
    ];

    pub fn posture(self) -> StandbyPosture {
        match self {
            DrMode::BackupAndRestore => StandbyPosture::ColdOffsite,
            DrMode::PilotLight => StandbyPosture::IdleConfigured,
            DrMode::WarmStandby => StandbyPosture::RunningSynced,
            DrMode::ActiveActive => StandbyPosture::ServingShare,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DrMode::BackupAndRestore => "backup_and_restore",
            DrMode::PilotLight => "pilot_light",
            DrMode::WarmStandby => "warm_standby",
            DrMode::ActiveActive => "active_active",
        }
    }
}

impl fmt::Display for DrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandbyPosture {
    /// Nothing provisioned; rebuild by hand, restore from offsite backup.
    ColdOffsite,
    /// Services defined but stopped; periodic snapshots.
    IdleConfigured,
    /// Services running, data streamed continuously, no traffic.
    RunningSynced,
    /// Services running and taking a weighted share of traffic.
    ServingShare,
}

impl StandbyPosture {
    pub fn containers_running(self) -> bool {
        matches!(
            self,
            StandbyPosture::RunningSynced | StandbyPosture::ServingShare
        )
    }
}

/// Tunables of a DR posture. Every field is a scenario override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrParams {
    /// `None` means continuous replication instead of snapshots.
    pub backup_cadence_ms: Option<u64>,
    pub manual_recovery_delay_ms: u64,
    pub operator_delay_ms: u64,
    pub redirect_delay_ms: u64,
    pub standby_replication_delay_ms: u64,
    pub standby_sync: SyncMode,
    /// Traffic share per zone (A, B) while both serve.
    pub weights: Vec<u32>,
    pub restore_rate_mib_s: f64,
}

/// Default parameter set for each mode.
pub fn mode_defaults(mode: DrMode) -> DrParams {
    let base = DrParams {
        backup_cadence_ms: Some(HOUR_MS),
        manual_recovery_delay_ms: 0,
        operator_delay_ms: 0,
        redirect_delay_ms: 0,
        standby_replication_delay_ms: 1_000,
        standby_sync: SyncMode::Async,
        weights: vec![100, 0],
        restore_rate_mib_s: 10.0,
    };
    match mode {
        DrMode::BackupAndRestore => DrParams {
            backup_cadence_ms: Some(DAY_MS),
            manual_recovery_delay_ms: DAY_MS,
            ..base
        },
        DrMode::PilotLight => base,
        DrMode::WarmStandby => DrParams {
            backup_cadence_ms: None,
            redirect_delay_ms: 30_000,
            ..base
        },
        DrMode::ActiveActive => DrParams {
            backup_cadence_ms: None,
            standby_replication_delay_ms: 0,
            standby_sync: SyncMode::Sync,
            weights: vec![70, 30],
            ..base
        },
    }
}

impl DrParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.backup_cadence_ms == Some(0) {
            return Err("backup cadence must be > 0".into());
        }
        if self.weights.len() != 2 {
            return Err(format!(
                "zone weights must have one entry per zone (2), got {}",
                self.weights.len()
            ));
        }
        if !(self.restore_rate_mib_s > 0.0) {
            return Err("restore rate must be > 0".into());
        }
        Ok(())
    }

    pub fn restore_ms(&self, size_mib: f64) -> u64 {
        (size_mib / self.restore_rate_mib_s * 1000.0).round() as u64
    }
}

/// What the controller must do after detecting a zone failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryPlan {
    /// Human/manual wait before anything starts.
    pub wait_ms: u64,
    /// Start the standby's stopped containers.
    pub activate: bool,
    /// Restore the latest delivered snapshot before serving.
    pub restore: bool,
    /// Extra delay before traffic moves.
    pub redirect_delay_ms: u64,
}

pub fn plan_recovery(mode: DrMode, params: &DrParams) -> RecoveryPlan {
    let cold = !mode.posture().containers_running();
    RecoveryPlan {
        wait_ms: params.operator_delay_ms + params.manual_recovery_delay_ms,
        activate: cold,
        restore: cold,
        redirect_delay_ms: params.redirect_delay_ms,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailoverState {
    Monitoring,
    Detected,
    Activating,
    Restoring,
    Serving,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DrError {
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        from: FailoverState,
        to: FailoverState,
    },
    #[error("no standby zone available")]
    StandbyUnavailable,
    #[error("zone {0} is not serving")]
    TargetNotServing(ZoneId),
}

/// Forward-only state machine with a timestamp per reached state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailoverStateMachine {
    pub state: FailoverState,
    pub history: Vec<(FailoverState, SimTime)>,
}

impl Default for FailoverStateMachine {
    fn default() -> Self {
        Self {
            state: FailoverState::Monitoring,
            history: vec![(FailoverState::Monitoring, SimTime::ZERO)],
        }
    }
}

impl FailoverStateMachine {
    pub fn advance(&mut self, to: FailoverState, now: SimTime) -> Result<(), DrError> {
        let last = self.history.last().map(|(_, t)| *t).unwrap_or_default();
        if to <= self.state || now < last {
            return Err(DrError::IllegalTransition {
                from: self.state,
                to,
            });
        }
        self.state = to;
        self.history.push((to, now));
        Ok(())
    }

    pub fn reached(&self, state: FailoverState) -> Option<SimTime> {
        self.history
            .iter()
            .find(|(s, _)| *s == state)
            .map(|(_, t)| *t)
    }
}

/// Measured outcome of one zone failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub mode: DrMode,
    pub failed_zone: ZoneId,
    pub failure_time: SimTime,
    pub detection_time: SimTime,
    pub serving_time: SimTime,
    pub rto_ms: u64,
    pub rpo_time_ms: u64,
    pub rpo_transactions: u64,
    pub primary_lsn_at_failure: Lsn,
    pub standby_lsn_at_serving: Lsn,
    /// Capture time of the restored snapshot or the replica sync point.
    pub synced_as_of: SimTime,
    pub transitions: Vec<(FailoverState, SimTime)>,
}

impl RecoveryRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        mode: DrMode,
        failed_zone: ZoneId,
        failure_time: SimTime,
        detection_time: SimTime,
        serving_time: SimTime,
        primary_lsn_at_failure: Lsn,
        standby_lsn_at_serving: Lsn,
        synced_as_of: SimTime,
        transitions: Vec<(FailoverState, SimTime)>,
    ) -> Self {
        let rpo_transactions = primary_lsn_at_failure
            .0
            .saturating_sub(standby_lsn_at_serving.0);
        let rpo_time_ms = if rpo_transactions == 0 {
            0
        } else {
            failure_time.since(synced_as_of)
        };
        Self {
            mode,
            failed_zone,
            failure_time,
            detection_time,
            serving_time,
            rto_ms: serving_time.since(failure_time),
            rpo_time_ms,
            rpo_transactions,
            primary_lsn_at_failure,
            standby_lsn_at_serving,
            synced_as_of,
            transitions,
        }
    }

    pub fn detection_latency_ms(&self) -> u64 {
        self.detection_time.since(self.failure_time)
    }
}

/// Zones that currently receive traffic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Routing {
    pub routable: Vec<ZoneId>,
}

/// Send all traffic to `to`, which must already be serving.
pub fn redirect_traffic(
    routing: &mut Routing,
    to: ZoneId,
    target_serving: bool,
) -> Result<(), DrError> {
    if !target_serving {
        return Err(DrError::TargetNotServing(to));
    }
    routing.routable = vec![to];
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pilot_light_hourly() {
        assert_eq!(
            mode_defaults(DrMode::PilotLight).backup_cadence_ms,
            Some(3_600_000)
        );
    }

    #[test]
    fn active_active_split() {
        let p = mode_defaults(DrMode::ActiveActive);
        assert_eq!(p.weights, vec![70, 30]);
        assert_eq!(p.standby_sync, SyncMode::Sync);
    }

    #[test]
    fn backup_restore_manual_day() {
        let p = mode_defaults(DrMode::BackupAndRestore);
        assert_eq!(p.manual_recovery_delay_ms, DAY_MS);
        assert_eq!(p.backup_cadence_ms, Some(DAY_MS));
    }

    #[test]
    fn posture_pairing() {
        assert_eq!(
            DrMode::BackupAndRestore.posture(),
            StandbyPosture::ColdOffsite
        );
        assert_eq!(DrMode::PilotLight.posture(), StandbyPosture::IdleConfigured);
        assert_eq!(DrMode::WarmStandby.posture(), StandbyPosture::RunningSynced);
        assert_eq!(DrMode::ActiveActive.posture(), StandbyPosture::ServingShare);
    }

    #[test]
    fn plans() {
        let pl = plan_recovery(DrMode::PilotLight, &mode_defaults(DrMode::PilotLight));
        assert!(pl.activate && pl.restore);
        assert_eq!(pl.wait_ms, 0);
        let ws = plan_recovery(DrMode::WarmStandby, &mode_defaults(DrMode::WarmStandby));
        assert!(!ws.activate && !ws.restore);
        let br = plan_recovery(
            DrMode::BackupAndRestore,
            &mode_defaults(DrMode::BackupAndRestore),
        );
        assert_eq!(br.wait_ms, DAY_MS);
    }

    #[test]
    fn restore_time() {
        assert_eq!(mode_defaults(DrMode::PilotLight).restore_ms(600.0), 60_000);
    }

    #[test]
    fn state_machine_forward_only() {
        let mut m = FailoverStateMachine::default();
        m.advance(FailoverState::Detected, SimTime(10)).unwrap();
        m.advance(FailoverState::Serving, SimTime(20)).unwrap();
        assert!(m.advance(FailoverState::Restoring, SimTime(30)).is_err());
        assert_eq!(m.reached(FailoverState::Detected), Some(SimTime(10)));
        let mut m = FailoverStateMachine::default();
        m.advance(FailoverState::Detected, SimTime(10)).unwrap();
        assert!(m.advance(FailoverState::Activating, SimTime(5)).is_err());
    }

    #[test]
    fn pilot_light_record() {
        // detection 2,500; db 8,000 then restore 60,000 dominates web 5,000
        let f = SimTime(4_980_000);
        let d = f.plus(2_500);
        let serving = d.plus(8_000 + 60_000);
        let r = RecoveryRecord::compute(
            DrMode::PilotLight,
            ZoneId::A,
            f,
            d,
            serving,
            Lsn(1000),
            Lsn(700),
            SimTime(3_600_000),
            vec![],
        );
        assert_eq!(r.rto_ms, 70_500);
        assert_eq!(r.rpo_time_ms, 1_380_000);
        assert_eq!(r.rpo_transactions, 300);
        assert_eq!(r.detection_latency_ms(), 2_500);
    }

    #[test]
    fn zero_loss_zero_rpo_time() {
        let r = RecoveryRecord::compute(
            DrMode::ActiveActive,
            ZoneId::A,
            SimTime(100),
            SimTime(200),
            SimTime(200),
            Lsn(5),
            Lsn(5),
            SimTime(0),
            vec![],
        );
        assert_eq!(r.rpo_time_ms, 0);
        assert_eq!(r.rpo_transactions, 0);
    }

    #[test]
    fn redirect_requires_serving() {
        let mut r = Routing {
            routable: vec![ZoneId::A, ZoneId::B],
        };
        assert_eq!(
            redirect_traffic(&mut r, ZoneId::B, false),
            Err(DrError::TargetNotServing(ZoneId::B))
        );
        redirect_traffic(&mut r, ZoneId::B, true).unwrap();
        assert_eq!(r.routable, vec![ZoneId::B]);
    }

    #[test]
    fn weights_arity() {
        let mut p = mode_defaults(DrMode::ActiveActive);
        p.weights = vec![70, 30, 10];
        assert!(p.validate().is_err());
    }
}
