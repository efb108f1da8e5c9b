//! Declarative scenario files: schema, parsing, validation and digest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autoscaler::AutoscalePolicy;
use crate::balancer::{HealthCheckConfig, SchedulerPolicy};
use crate::dbcluster::{MonitorConfig, SyncMode};
use crate::drctl::{mode_defaults, DrMode, DrParams};
use crate::engine::{Arrival, LoadStep, ServiceTime, SimTime, WorkloadSpec};
use crate::faults::{validate_faults, FaultEvent};
use crate::metrics::SlaTarget;
use crate::storage::Quorum;
use crate::topology::{
    mirrored, validate_topology, ContainerSpec, InterZoneLink, Role, Topology, TopologyError, Zone,
    ZoneId, ZoneRole,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerDecl {
    pub id: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_limit_mib: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_reservation_mib: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposed_ports: Option<Vec<u16>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub startup_delay_ms: Option<u64>,
}

impl ContainerDecl {
    pub fn spec(&self) -> ContainerSpec {
        let mut s = ContainerSpec::new(self.id.clone(), self.role);
        if let Some(v) = self.cpu_limit {
            s.cpu_limit = v;
        }
        if let Some(v) = self.mem_limit_mib {
            s.mem_limit_mib = v;
        }
        if let Some(v) = self.mem_reservation_mib {
            s.mem_reservation_mib = v;
        }
        if let Some(v) = &self.exposed_ports {
            s.exposed_ports = v.clone();
        }
        if let Some(v) = self.startup_delay_ms {
            s.startup_delay_ms = v;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneDecl {
    pub id: ZoneId,
    pub role: ZoneRole,
    /// Clone the primary zone's containers with `@<zone>` ids.
    #[serde(default)]
    pub mirror: bool,
    #[serde(default)]
    pub containers: Vec<ContainerDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDecl {
    pub latency_ms: u64,
    pub bandwidth_mib_s: f64,
}

impl Default for LinkDecl {
    fn default() -> Self {
        Self {
            latency_ms: 20,
            bandwidth_mib_s: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub zones: Vec<ZoneDecl>,
    #[serde(default)]
    pub link: LinkDecl,
}

/// DR mode plus optional overrides of its defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrSection {
    pub mode: Option<DrMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backup_cadence_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_recovery_delay_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_delay_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redirect_delay_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standby_replication_delay_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standby_sync: Option<SyncMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restore_rate_mib_s: Option<f64>,
}

impl DrSection {
    pub fn mode(&self) -> DrMode {
        self.mode.unwrap_or(DrMode::PilotLight)
    }

    pub fn params(&self) -> DrParams {
        let mut p = mode_defaults(self.mode());
        if let Some(v) = self.backup_cadence_ms {
            p.backup_cadence_ms = Some(v);
        }
        if let Some(v) = self.manual_recovery_delay_ms {
            p.manual_recovery_delay_ms = v;
        }
        if let Some(v) = self.operator_delay_ms {
            p.operator_delay_ms = v;
        }
        if let Some(v) = self.redirect_delay_ms {
            p.redirect_delay_ms = v;
        }
        if let Some(v) = self.standby_replication_delay_ms {
            p.standby_replication_delay_ms = v;
        }
        if let Some(v) = self.standby_sync {
            p.standby_sync = v;
        }
        if let Some(v) = &self.weights {
            p.weights = v.clone();
        }
        if let Some(v) = self.restore_rate_mib_s {
            p.restore_rate_mib_s = v;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancerSection {
    #[serde(default = "default_policy")]
    pub policy: SchedulerPolicy,
    #[serde(default)]
    pub health: HealthCheckConfig,
    /// Requests one web node serves at once. Absent means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_concurrency: Option<u32>,
    /// Waiting requests per node before rejection. Absent means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_limit: Option<u32>,
}

fn default_policy() -> SchedulerPolicy {
    SchedulerPolicy::RoundRobin
}

impl Default for BalancerSection {
    fn default() -> Self {
        Self {
            policy: default_policy(),
            health: HealthCheckConfig::default(),
            backend_concurrency: None,
            queue_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbSection {
    #[serde(default)]
    pub monitor: MonitorConfig,
    /// In-zone slave lag.
    #[serde(default = "default_replication_delay")]
    pub replication_delay_ms: u64,
    #[serde(default)]
    pub sync: SyncMode,
    #[serde(default)]
    pub exclude_master_reads: bool,
}

fn default_replication_delay() -> u64 {
    500
}

impl Default for DbSection {
    fn default() -> Self {
        Self {
            monitor: MonitorConfig::default(),
            replication_delay_ms: default_replication_delay(),
            sync: SyncMode::Async,
            exclude_master_reads: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSection {
    #[serde(default)]
    pub quorum: Quorum,
    #[serde(default = "default_snapshot_size")]
    pub snapshot_size_mib: f64,
}

fn default_snapshot_size() -> f64 {
    600.0
}

impl Default for StorageSection {
    fn default() -> Self {
        Self {
            quorum: Quorum::Majority,
            snapshot_size_mib: default_snapshot_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub arrival: Arrival,
    pub read_fraction: f64,
    pub service_time: ServiceTime,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub load_steps: Vec<LoadStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub duration_ms: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub topology: TopologySection,
    #[serde(default)]
    pub dr: DrSection,
    #[serde(default)]
    pub balancer: BalancerSection,
    #[serde(default)]
    pub db: DbSection,
    #[serde(default)]
    pub storage: StorageSection,
    pub workload: WorkloadSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autoscale: Option<AutoscalePolicy>,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
    #[serde(default = "default_sla")]
    pub sla: SlaTarget,
    pub run: RunSection,
}

fn default_sla() -> SlaTarget {
    SlaTarget::new(99.9)
}

/// One validation finding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn diag(path: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        path: path.into(),
        message: message.into(),
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

impl ScenarioConfig {
    pub fn mode(&self) -> DrMode {
        self.dr.mode()
    }

    pub fn params(&self) -> DrParams {
        self.dr.params()
    }

    pub fn workload(&self) -> WorkloadSpec {
        WorkloadSpec {
            arrival: self.workload.arrival,
            duration: SimTime(self.run.duration_ms),
            read_fraction: self.workload.read_fraction,
            service_time: self.workload.service_time,
            load_steps: self.workload.load_steps.clone(),
        }
    }

    /// sha256 over the canonical serialization.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Copy with another DR mode and none of the DR overrides.
    pub fn with_mode_defaults(&self, mode: DrMode) -> ScenarioConfig {
        let mut c = self.clone();
        c.dr = DrSection {
            mode: Some(mode),
            ..DrSection::default()
        };
        c
    }

    fn zone_decl(&self, id: ZoneId) -> Option<&ZoneDecl> {
        self.topology.zones.iter().find(|z| z.id == id)
    }

    fn primary_decl(&self) -> Option<&ZoneDecl> {
        self.topology
            .zones
            .iter()
            .find(|z| z.role == ZoneRole::Primary)
    }

    /// Container specs of a zone, mirrors expanded.
    pub fn zone_specs(&self, id: ZoneId) -> Vec<ContainerSpec> {
        let Some(decl) = self.zone_decl(id) else {
            return Vec::new();
        };
        let mut specs = Vec::new();
        if decl.mirror {
            if let Some(p) = self.primary_decl().filter(|p| p.id != id) {
                let base: Vec<_> = p.containers.iter().map(ContainerDecl::spec).collect();
                specs.extend(mirrored(&base, id));
            }
        }
        specs.extend(decl.containers.iter().map(ContainerDecl::spec));
        specs
    }

    pub fn build_topology(&self) -> Result<Topology, TopologyError> {
        let role_of = |id: ZoneId| {
            self.zone_decl(id)
                .map(|z| z.role)
                .unwrap_or(ZoneRole::Standby)
        };
        let a = Zone::new(ZoneId::A, role_of(ZoneId::A), self.zone_specs(ZoneId::A));
        let b = Zone::new(ZoneId::B, role_of(ZoneId::B), self.zone_specs(ZoneId::B));
        let link = InterZoneLink::new(
            self.topology.link.latency_ms,
            self.topology.link.bandwidth_mib_s,
        );
        Topology::new(a, b, link, self.mode())
    }

    /// Every schema and cross-reference check. Empty means runnable.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(diag(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        let zones = &self.topology.zones;
        if zones.len() != 2 || zones[0].id == zones[1].id {
            out.push(diag(
                "topology.zones",
                "exactly two zones, A and B, are required",
            ));
        }
        if self.run.duration_ms == 0 {
            out.push(diag("run.duration_ms", "must be > 0"));
        }
        if let Err(e) = self.workload().validate() {
            out.push(diag("workload", e));
        }
        let params = self.params();
        if let Err(e) = params.validate() {
            out.push(diag("dr", e));
        }
        if let SchedulerPolicy::Weighted(ws) = &self.balancer.policy {
            if ws.is_empty() || ws.contains(&0) {
                out.push(diag("balancer.policy", "weights must all be >= 1"));
            }
        }
        if let Err(e) = self.balancer.health.validate() {
            out.push(diag("balancer.health", e));
        }
        if self.balancer.backend_concurrency == Some(0) {
            out.push(diag("balancer.backend_concurrency", "must be >= 1"));
        }
        if let Err(e) = self.db.monitor.validate() {
            out.push(diag("db.monitor", e));
        }
        if !(self.storage.snapshot_size_mib > 0.0) {
            out.push(diag("storage.snapshot_size_mib", "must be > 0"));
        }
        if !self.sla.is_valid() {
            out.push(diag("sla", "percent must be in (0, 100]"));
        }
        if let Some(a) = &self.autoscale {
            for e in a.validate() {
                out.push(diag("autoscale", e));
            }
        }
        match self.build_topology() {
            Ok(t) => {
                for v in validate_topology(&t) {
                    out.push(diag(format!("topology.{}", v.subject), v.message));
                }
                for e in validate_faults(&self.faults, |id| t.zone_of(id), self.run.duration_ms) {
                    out.push(diag("faults", e.to_string()));
                }
            }
            Err(e) => out.push(diag("topology", e.to_string())),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "name": "minimal",
        "topology": {
            "zones": [
                {"id": "A", "role": "primary", "containers": [
                    {"id": "web-1", "role": "web_server"},
                    {"id": "db-master", "role": "db_master"}
                ]},
                {"id": "B", "role": "standby", "mirror": true}
            ]
        },
        "dr": {"mode": "pilot_light"},
        "workload": {"arrival": {"fixed_interval": 1000}, "read_fraction": 0.8,
                     "service_time": {"fixed": 50}},
        "run": {"duration_ms": 60000, "seed": 1}
    }"#;

    #[test]
    fn minimal_is_valid() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert!(s.validate().is_empty(), "{:?}", s.validate());
        let t = s.build_topology().unwrap();
        assert!(t.container("db-master@B").is_some());
        assert_eq!(t.container("web-1").unwrap().spec.cpu_limit, 4.0);
    }

    #[test]
    fn weights_arity_diagnostic() {
        let mut s = parse_scenario(MINIMAL).unwrap();
        s.dr.weights = Some(vec![70, 30, 10]);
        let d = s.validate();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "dr");
    }

    #[test]
    fn unknown_fault_target() {
        let mut s = parse_scenario(MINIMAL).unwrap();
        s.faults =
            serde_json::from_str(r#"[{"at_ms": 10, "fault": {"node_crash": "web-7"}}]"#).unwrap();
        assert_eq!(s.validate().len(), 1);
    }

    #[test]
    fn malformed_is_parse_error() {
        assert!(matches!(
            parse_scenario("{ nope"),
            Err(ScenarioError::Parse(_))
        ));
        assert!(matches!(
            parse_scenario(&MINIMAL.replace("\"name\"", "\"nmae\"")),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn overrides_apply() {
        let mut s = parse_scenario(MINIMAL).unwrap();
        s.dr.backup_cadence_ms = Some(1000);
        assert_eq!(s.params().backup_cadence_ms, Some(1000));
        let plain = s.with_mode_defaults(DrMode::WarmStandby);
        assert_eq!(plain.params(), mode_defaults(DrMode::WarmStandby));
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.digest(), parse_scenario(MINIMAL).unwrap().digest());
        assert_eq!(s.digest().len(), 64);
        let mut t = s.clone();
        t.run.seed = 2;
        assert_ne!(s.digest(), t.digest());
    }
}
