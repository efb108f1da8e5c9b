//! Replicated network file store and cross-zone snapshot shipping.
//!
//! The store follows the usual replicated-volume workflow: bricks join a
//! trusted pool by peer probe, a replica volume is created over pool
//! members, started, and mounted by clients on its allow-list. Writes need
//! the configured quorum of up bricks; reads need one.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbcluster::Lsn;
use crate::engine::SimTime;
use crate::topology::{InterZoneLink, ZoneId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StorageError {
    #[error("brick {0} is already a pool member")]
    AlreadyMember(String),
    #[error("brick {0} is down")]
    BrickDown(String),
    #[error("brick {0} is not in the trusted pool")]
    UnknownBrick(String),
    #[error("volume {0} is not started")]
    NotStarted(String),
    #[error("client {0} is not in auth.allow")]
    ClientNotAllowed(String),
    #[error("client {0} has not mounted the volume")]
    NotMounted(String),
    #[error("write quorum lost ({up} of {total} bricks up)")]
    QuorumLost { up: usize, total: usize },
    #[error("all bricks down")]
    AllBricksDown,
    #[error("inter-zone link down")]
    LinkDown,
    #[error("primary data unreadable")]
    SourceUnreadable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quorum {
    #[default]
    Majority,
    All,
    One,
}

impl Quorum {
    /// Up bricks required for a write across `n` bricks.
    pub fn needed(self, n: usize) -> usize {
        match self {
            Quorum::Majority => n / 2 + 1,
            Quorum::All => n,
            Quorum::One => 1.min(n),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrustedPool {
    members: BTreeSet<String>,
}

impl TrustedPool {
    pub fn members(&self) -> &BTreeSet<String> {
        &self.members
    }

    pub fn contains(&self, brick: &str) -> bool {
        self.members.contains(brick)
    }

    /// Add a brick to the pool. Membership only grows.
    pub fn peer_probe(&mut self, brick: &str, brick_up: bool) -> Result<(), StorageError> {
        if self.members.contains(brick) {
            return Err(StorageError::AlreadyMember(brick.to_string()));
        }
        if !brick_up {
            return Err(StorageError::BrickDown(brick.to_string()));
        }
        self.members.insert(brick.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReplicaVolume {
    pub name: String,
    pub bricks: Vec<String>,
    pub quorum: Quorum,
    pub allowed_clients: BTreeSet<String>,
    pub started: bool,
    mounted: BTreeSet<String>,
    brick_up: BTreeMap<String, bool>,
    /// Latest write version each brick holds.
    brick_version: BTreeMap<String, u64>,
    version: u64,
}

impl ReplicaVolume {
    /// Create a replica volume over pool members (all bricks start up).
    pub fn create(
        pool: &TrustedPool,
        name: &str,
        bricks: &[String],
        quorum: Quorum,
    ) -> Result<Self, StorageError> {
        if let Some(b) = bricks.iter().find(|b| !pool.contains(b)) {
            return Err(StorageError::UnknownBrick(b.clone()));
        }
        Ok(Self {
            name: name.to_string(),
            bricks: bricks.to_vec(),
            quorum,
            allowed_clients: BTreeSet::new(),
            started: false,
            mounted: BTreeSet::new(),
            brick_up: bricks.iter().map(|b| (b.clone(), true)).collect(),
            brick_version: bricks.iter().map(|b| (b.clone(), 0)).collect(),
            version: 0,
        })
    }

    /// auth.allow
    pub fn allow(&mut self, client: &str) {
        self.allowed_clients.insert(client.to_string());
    }

    pub fn start(&mut self) {
        self.started = true;
    }

    pub fn mount(&mut self, client: &str) -> Result<(), StorageError> {
        if !self.started {
            return Err(StorageError::NotStarted(self.name.clone()));
        }
        if !self.allowed_clients.contains(client) {
            return Err(StorageError::ClientNotAllowed(client.to_string()));
        }
        self.mounted.insert(client.to_string());
        Ok(())
    }

    pub fn is_mounted(&self, client: &str) -> bool {
        self.mounted.contains(client)
    }

    pub fn set_brick_up(&mut self, brick: &str, up: bool) {
        if let Some(s) = self.brick_up.get_mut(brick) {
            *s = up;
        }
    }

    pub fn up_bricks(&self) -> usize {
        self.brick_up.values().filter(|u| **u).count()
    }

    pub fn readable(&self) -> bool {
        self.started && self.up_bricks() >= 1
    }

    pub fn writable(&self) -> bool {
        self.started && self.up_bricks() >= self.quorum.needed(self.bricks.len())
    }

    /// Replicate a write to every up brick; succeeds iff quorum holds.
    pub fn write(&mut self, _payload_mib: f64) -> Result<u64, StorageError> {
        if !self.started {
            return Err(StorageError::NotStarted(self.name.clone()));
        }
        let up = self.up_bricks();
        if up < self.quorum.needed(self.bricks.len()) {
            return Err(StorageError::QuorumLost {
                up,
                total: self.bricks.len(),
            });
        }
        self.version += 1;
        for (b, is_up) in &self.brick_up {
            if *is_up {
                self.brick_version.insert(b.clone(), self.version);
            }
        }
        Ok(self.version)
    }

    /// Newest version held by any up brick.
    pub fn read(&self) -> Result<u64, StorageError> {
        if !self.started {
            return Err(StorageError::NotStarted(self.name.clone()));
        }
        self.brick_up
            .iter()
            .filter(|(_, up)| **up)
            .map(|(b, _)| self.brick_version[b])
            .max()
            .ok_or(StorageError::AllBricksDown)
    }

    pub fn holders_of(&self, version: u64) -> usize {
        self.brick_version
            .values()
            .filter(|v| **v >= version)
            .count()
    }
}

/// A full copy of primary data at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub taken_at: SimTime,
    pub data_lsn: Lsn,
    pub size_mib: f64,
    pub location: ZoneId,
}

/// A snapshot on the wire to the standby zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shipment {
    pub snapshot: Snapshot,
    pub arrives_at: SimTime,
    pub link_epoch: u64,
}

/// Snapshots delivered to the standby zone.
#[derive(Debug, Clone, Default)]
pub struct SnapshotCatalog {
    delivered: Vec<Snapshot>,
    /// Bumped whenever in-flight transfers are lost.
    pub link_epoch: u64,
}

impl SnapshotCatalog {
    /// Capture now and start shipping. The arrival must be scheduled by the
    /// caller and confirmed through [`SnapshotCatalog::deliver`].
    pub fn backup_tick(
        &self,
        now: SimTime,
        link: &InterZoneLink,
        source_readable: bool,
        data_lsn: Lsn,
        size_mib: f64,
        destination: ZoneId,
    ) -> Result<Shipment, StorageError> {
        if !link.is_up() {
            return Err(StorageError::LinkDown);
        }
        if !source_readable {
            return Err(StorageError::SourceUnreadable);
        }
        Ok(Shipment {
            snapshot: Snapshot {
                taken_at: now,
                data_lsn,
                size_mib,
                location: destination,
            },
            arrives_at: now.plus(link.transfer_ms(size_mib)),
            link_epoch: self.link_epoch,
        })
    }

    /// Accept an arriving shipment unless the transfer was interrupted.
    pub fn deliver(&mut self, shipment: Shipment) -> bool {
        if shipment.link_epoch != self.link_epoch {
            return false;
        }
        // Arrivals are in capture order because transfer time is constant
        // per snapshot size; guard anyway so the catalog stays monotone.
        if self
            .latest()
            .is_some_and(|s| s.taken_at > shipment.snapshot.taken_at)
        {
            return false;
        }
        self.delivered.push(shipment.snapshot);
        true
    }

    /// Drop everything currently on the wire.
    pub fn interrupt(&mut self) {
        self.link_epoch += 1;
    }

    pub fn latest(&self) -> Option<&Snapshot> {
        self.delivered.last()
    }

    pub fn latest_at(&self, zone: ZoneId) -> Option<&Snapshot> {
        self.delivered.iter().rev().find(|s| s.location == zone)
    }

    pub fn delivered(&self) -> &[Snapshot] {
        &self.delivered
    }
}
