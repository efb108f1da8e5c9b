//! Zones, containers and the inter-zone link of the two-zone layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drctl::DrMode;
use crate::engine::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ZoneId {
    A,
    B,
}

impl ZoneId {
    pub fn other(self) -> ZoneId {
        match self {
            ZoneId::A => ZoneId::B,
            ZoneId::B => ZoneId::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            ZoneId::A => 0,
            ZoneId::B => 1,
        }
    }
}

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZoneId::A => "A",
            ZoneId::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    WebServer,
    BalancerFront,
    DbMaster,
    DbSlave,
    DbRouter,
    StorageBrick,
    MailServer,
}

impl Role {
    pub fn is_db(self) -> bool {
        matches!(self, Role::DbMaster | Role::DbSlave)
    }

    /// Roles whose state must be restored from a snapshot on activation.
    pub fn holds_data(self) -> bool {
        matches!(self, Role::DbMaster | Role::DbSlave | Role::StorageBrick)
    }

    pub fn default_startup_delay_ms(self) -> u64 {
        match self {
            Role::DbMaster | Role::DbSlave => 8_000,
            _ => 5_000,
        }
    }

    pub fn default_ports(self) -> Vec<u16> {
        match self {
            Role::WebServer | Role::BalancerFront => vec![80, 443],
            Role::DbMaster | Role::DbSlave => vec![3306],
            Role::DbRouter => vec![4006, 8989],
            Role::StorageBrick => vec![24007],
            Role::MailServer => vec![25],
        }
    }
}

/// Resource and timing description of one container.
///
/// Resource limits are carried for validation and reporting; they do not
/// throttle anything in the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerSpec {
    pub id: String,
    pub role: Role,
    pub cpu_limit: f64,
    pub mem_limit_mib: u64,
    pub mem_reservation_mib: u64,
    pub exposed_ports: Vec<u16>,
    pub startup_delay_ms: u64,
}

impl ContainerSpec {
    /// A container with the single-web-server compose defaults
    /// (4 vCPU, 2048M limit, 1768M reservation).
    pub fn new(id: impl Into<String>, role: Role) -> Self {
        Self {
            id: id.into(),
            role,
            cpu_limit: 4.0,
            mem_limit_mib: 2048,
            mem_reservation_mib: 1768,
            exposed_ports: role.default_ports(),
            startup_delay_ms: role.default_startup_delay_ms(),
        }
    }

    pub fn with_startup_delay(mut self, ms: u64) -> Self {
        self.startup_delay_ms = ms;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneRole {
    Primary,
    Standby,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneMode {
    Active,
    Idle,
    Activating,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunState {
    Down,
    Starting { up_at: SimTime },
    Up,
}

#[derive(Debug, Clone)]
pub struct Container {
    pub spec: ContainerSpec,
    pub state: RunState,
    /// Data invalid until restored; counts as down for serving.
    pub corrupted: bool,
    /// Removed by scale-in; never restarted.
    pub retired: bool,
}

impl Container {
    pub fn new(spec: ContainerSpec) -> Self {
        Self {
            spec,
            state: RunState::Down,
            corrupted: false,
            retired: false,
        }
    }

    /// Running with valid data.
    pub fn serving(&self) -> bool {
        self.state == RunState::Up && !self.corrupted
    }
}

#[derive(Debug, Clone)]
pub struct Zone {
    pub id: ZoneId,
    pub role: ZoneRole,
    pub mode: ZoneMode,
    pub containers: Vec<Container>,
}

impl Zone {
    pub fn new(id: ZoneId, role: ZoneRole, specs: Vec<ContainerSpec>) -> Self {
        Self {
            id,
            role,
            mode: ZoneMode::Idle,
            containers: specs.into_iter().map(Container::new).collect(),
        }
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &Container> {
        self.containers.iter().filter(move |c| c.spec.role == role)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkState {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterZoneLink {
    pub latency_ms: u64,
    pub bandwidth_mib_s: f64,
    #[serde(skip, default = "link_up")]
    pub state: LinkState,
}

fn link_up() -> LinkState {
    LinkState::Up
}

impl InterZoneLink {
    pub fn new(latency_ms: u64, bandwidth_mib_s: f64) -> Self {
        Self {
            latency_ms,
            bandwidth_mib_s,
            state: LinkState::Up,
        }
    }

    pub fn is_up(&self) -> bool {
        self.state == LinkState::Up
    }

    /// Full-copy transfer time for `size_mib`, rounded to the nearest ms.
    pub fn transfer_ms(&self, size_mib: f64) -> u64 {
        (size_mib / self.bandwidth_mib_s * 1000.0).round() as u64 + self.latency_ms
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("zone {0} is not accepting containers")]
    ZoneUnavailable(ZoneId),
    #[error("unknown container {0}")]
    UnknownContainer(String),
    #[error("duplicate container id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl Violation {
    fn new(subject: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub zones: [Zone; 2],
    pub link: InterZoneLink,
    pub dr_mode: DrMode,
    index: BTreeMap<String, (ZoneId, usize)>,
}

impl Topology {
    /// Build from two zones. Ids must be unique across both.
    pub fn new(
        zone_a: Zone,
        zone_b: Zone,
        link: InterZoneLink,
        dr_mode: DrMode,
    ) -> Result<Self, TopologyError> {
        let mut index = BTreeMap::new();
        for zone in [&zone_a, &zone_b] {
            for (i, c) in zone.containers.iter().enumerate() {
                if index.insert(c.spec.id.clone(), (zone.id, i)).is_some() {
                    return Err(TopologyError::DuplicateId(c.spec.id.clone()));
                }
            }
        }
        Ok(Self {
            zones: [zone_a, zone_b],
            link,
            dr_mode,
            index,
        })
    }

    pub fn zone(&self, id: ZoneId) -> &Zone {
        &self.zones[id.index()]
    }

    pub fn zone_mut(&mut self, id: ZoneId) -> &mut Zone {
        &mut self.zones[id.index()]
    }

    pub fn primary(&self) -> ZoneId {
        self.zones
            .iter()
            .find(|z| z.role == ZoneRole::Primary)
            .map(|z| z.id)
            .unwrap_or(ZoneId::A)
    }

    pub fn locate(&self, id: &str) -> Option<(ZoneId, usize)> {
        self.index.get(id).copied()
    }

    pub fn container(&self, id: &str) -> Option<&Container> {
        let (z, i) = self.locate(id)?;
        Some(&self.zone(z).containers[i])
    }

    pub fn container_mut(&mut self, id: &str) -> Option<&mut Container> {
        let (z, i) = self.locate(id)?;
        Some(&mut self.zone_mut(z).containers[i])
    }

    pub fn zone_of(&self, id: &str) -> Option<ZoneId> {
        self.locate(id).map(|(z, _)| z)
    }

    pub fn is_serving(&self, id: &str) -> bool {
        self.container(id).is_some_and(Container::serving)
    }

    pub fn all_containers(&self) -> impl Iterator<Item = (ZoneId, &Container)> {
        self.zones
            .iter()
            .flat_map(|z| z.containers.iter().map(move |c| (z.id, c)))
    }

    /// Add a container at runtime (scale-out).
    pub fn add_container(
        &mut self,
        zone: ZoneId,
        spec: ContainerSpec,
    ) -> Result<(), TopologyError> {
        if self.index.contains_key(&spec.id) {
            return Err(TopologyError::DuplicateId(spec.id));
        }
        let z = self.zone_mut(zone);
        z.containers.push(Container::new(spec.clone()));
        let idx = z.containers.len() - 1;
        self.index.insert(spec.id, (zone, idx));
        Ok(())
    }

    /// Begin starting a container; returns the time it will be up.
    pub fn start_container(&mut self, id: &str, now: SimTime) -> Result<SimTime, TopologyError> {
        let (zone, i) = self
            .locate(id)
            .ok_or_else(|| TopologyError::UnknownContainer(id.to_string()))?;
        let z = self.zone_mut(zone);
        if !matches!(z.mode, ZoneMode::Active | ZoneMode::Activating) {
            return Err(TopologyError::ZoneUnavailable(zone));
        }
        let c = &mut z.containers[i];
        let up_at = now.plus(c.spec.startup_delay_ms);
        c.state = RunState::Starting { up_at };
        Ok(up_at)
    }

    /// Complete a pending start. Returns false if the start was superseded.
    pub fn finish_start(&mut self, id: &str, now: SimTime) -> bool {
        match self.container_mut(id) {
            Some(c) if c.state == (RunState::Starting { up_at: now }) => {
                c.state = RunState::Up;
                true
            }
            _ => false,
        }
    }
}

/// Mirror a primary zone's definitions into the standby zone with
/// `@<zone>` suffixed ids.
pub fn mirrored(specs: &[ContainerSpec], zone: ZoneId) -> Vec<ContainerSpec> {
    specs
        .iter()
        .map(|s| ContainerSpec {
            id: format!("{}@{}", s.id, zone),
            ..s.clone()
        })
        .collect()
}

/// Static checks. Violations are data, not errors.
pub fn validate_topology(t: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let primaries = t
        .zones
        .iter()
        .filter(|z| z.role == ZoneRole::Primary)
        .count();
    if primaries != 1 {
        out.push(Violation::new(
            "topology",
            format!("expected exactly one primary zone, found {primaries}"),
        ));
    }
    for zone in &t.zones {
        let mut masters = 0;
        for c in &zone.containers {
            let s = &c.spec;
            if !seen.insert(s.id.clone()) {
                out.push(Violation::new(&s.id, "duplicate container id"));
            }
            if s.mem_reservation_mib > s.mem_limit_mib {
                out.push(Violation::new(
                    &s.id,
                    format!(
                        "memory reservation {}M exceeds limit {}M",
                        s.mem_reservation_mib, s.mem_limit_mib
                    ),
                ));
            }
            if !(s.cpu_limit > 0.0) {
                out.push(Violation::new(&s.id, "cpu limit must be > 0"));
            }
            if s.role == Role::DbMaster {
                masters += 1;
            }
        }
        if masters > 1 {
            out.push(Violation::new(
                format!("zone {}", zone.id),
                format!("{masters} containers with role db_master"),
            ));
        }
        if zone.role == ZoneRole::Primary {
            if zone.with_role(Role::WebServer).next().is_none() {
                out.push(Violation::new(
                    format!("zone {}", zone.id),
                    "primary zone has no web servers",
                ));
            }
            if masters == 0 {
                out.push(Violation::new(
                    format!("zone {}", zone.id),
                    "primary zone has no db_master",
                ));
            }
        }
    }
    if !(t.link.bandwidth_mib_s > 0.0) {
        out.push(Violation::new("link", "bandwidth must be > 0"));
    }
    out
}
