//! Scheduled fault injection.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;
use crate::topology::ZoneId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    NodeCrash(String),
    NodeRecover(String),
    ZoneOutage(ZoneId),
    ZoneRecover(ZoneId),
    LinkDown { duration_ms: u64 },
    DataCorruption(String),
}

impl FaultKind {
    pub fn target(&self) -> Option<&str> {
        match self {
            FaultKind::NodeCrash(c) | FaultKind::NodeRecover(c) | FaultKind::DataCorruption(c) => {
                Some(c)
            }
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            FaultKind::NodeCrash(c) => format!("node_crash({c})"),
            FaultKind::NodeRecover(c) => format!("node_recover({c})"),
            FaultKind::ZoneOutage(z) => format!("zone_outage({z})"),
            FaultKind::ZoneRecover(z) => format!("zone_recover({z})"),
            FaultKind::LinkDown { duration_ms } => format!("link_down({duration_ms}ms)"),
            FaultKind::DataCorruption(c) => format!("data_corruption({c})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub at_ms: u64,
    pub fault: FaultKind,
}

impl FaultEvent {
    pub fn at(&self) -> SimTime {
        SimTime(self.at_ms)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FaultError {
    #[error("fault at {at_ms} ms targets unknown container {target}")]
    UnknownTarget { at_ms: u64, target: String },
    #[error("fault at {at_ms} ms recovers {target}, which has not failed")]
    RecoverBeforeFail { at_ms: u64, target: String },
    #[error("fault at {at_ms} ms is outside the run ({duration_ms} ms)")]
    OutsideRun { at_ms: u64, duration_ms: u64 },
    #[error("fault schedule is not ordered by time at index {0}")]
    Unordered(usize),
}

/// Checks a fault schedule against the known container ids. `zone_of`
/// resolves a container to its zone so zone recovery can be tracked.
pub fn validate_faults<'a>(
    faults: &[FaultEvent],
    known: impl Fn(&str) -> Option<ZoneId> + 'a,
    duration_ms: u64,
) -> Vec<FaultError> {
    let mut errors = Vec::new();
    let mut failed_nodes: BTreeSet<String> = BTreeSet::new();
    let mut failed_zones: BTreeSet<ZoneId> = BTreeSet::new();
    for (i, f) in faults.iter().enumerate() {
        if i > 0 && faults[i - 1].at_ms > f.at_ms {
            errors.push(FaultError::Unordered(i));
        }
        if f.at_ms >= duration_ms {
            errors.push(FaultError::OutsideRun {
                at_ms: f.at_ms,
                duration_ms,
            });
        }
        if let Some(t) = f.fault.target() {
            if known(t).is_none() {
                errors.push(FaultError::UnknownTarget {
                    at_ms: f.at_ms,
                    target: t.to_string(),
                });
                continue;
            }
        }
        match &f.fault {
            FaultKind::NodeCrash(c) | FaultKind::DataCorruption(c) => {
                failed_nodes.insert(c.clone());
            }
            FaultKind::NodeRecover(c) => {
                let zone_failed = known(c).is_some_and(|z| failed_zones.contains(&z));
                if !failed_nodes.remove(c) && !zone_failed {
                    errors.push(FaultError::RecoverBeforeFail {
                        at_ms: f.at_ms,
                        target: c.clone(),
                    });
                }
            }
            FaultKind::ZoneOutage(z) => {
                failed_zones.insert(*z);
            }
            FaultKind::ZoneRecover(z) => {
                if !failed_zones.remove(z) {
                    errors.push(FaultError::RecoverBeforeFail {
                        at_ms: f.at_ms,
                        target: z.to_string(),
                    });
                }
            }
            FaultKind::LinkDown { .. } => {}
        }
    }
    errors
}
