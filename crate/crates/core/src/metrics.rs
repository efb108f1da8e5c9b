//! SLA arithmetic, availability integration, recovery bands and the run
//! report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autoscaler::ScaleDecision;
use crate::dbcluster::PromotionRecord;
use crate::drctl::{DrMode, RecoveryRecord, DAY_MS, HOUR_MS};
use crate::engine::SimTime;

pub const DEFAULT_YEAR_DAYS: f64 = 365.2425;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaTarget {
    pub percent: f64,
    #[serde(default = "default_year")]
    pub year_length_days: f64,
}

fn default_year() -> f64 {
    DEFAULT_YEAR_DAYS
}

impl SlaTarget {
    pub fn new(percent: f64) -> Self {
        Self {
            percent,
            year_length_days: DEFAULT_YEAR_DAYS,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.percent > 0.0 && self.percent <= 100.0 && self.year_length_days > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DowntimeBudget {
    pub total_seconds: u64,
    pub formatted: String,
}

/// Allowed yearly downtime, truncated to whole seconds.
pub fn sla_to_downtime(target: SlaTarget) -> DowntimeBudget {
    let secs = downtime_over(target.percent, target.year_length_days * 86_400.0);
    DowntimeBudget {
        total_seconds: secs,
        formatted: format_duration(secs),
    }
}

/// Allowed downtime in whole seconds over an arbitrary period.
pub fn downtime_over(percent: f64, period_seconds: f64) -> u64 {
    let raw = (1.0 - percent / 100.0) * period_seconds;
    if raw <= 0.0 {
        0
    } else {
        raw.floor() as u64
    }
}

/// `Nd Nh Nm Ns`, zero components omitted; zero is `0s`.
pub fn format_duration(total_seconds: u64) -> String {
    if total_seconds == 0 {
        return "0s".to_string();
    }
    let parts = [
        (total_seconds / 86_400, 'd'),
        (total_seconds % 86_400 / 3_600, 'h'),
        (total_seconds % 3_600 / 60, 'm'),
        (total_seconds % 60, 's'),
    ];
    parts
        .iter()
        .filter(|(n, _)| *n > 0)
        .map(|(n, u)| format!("{n}{u}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn availability_percent(downtime_ms: u64, duration_ms: u64) -> f64 {
    if duration_ms == 0 {
        return 100.0;
    }
    100.0 * (duration_ms - downtime_ms.min(duration_ms)) as f64 / duration_ms as f64
}

/// Integrates read, write and overall downtime from state changes.
#[derive(Debug, Clone)]
pub struct AvailabilityTracker {
    read_ok: bool,
    write_ok: bool,
    since: SimTime,
    read_down_ms: u64,
    write_down_ms: u64,
    down_ms: u64,
    outage_start: Option<SimTime>,
    outages: Vec<(SimTime, SimTime)>,
}

impl Default for AvailabilityTracker {
    fn default() -> Self {
        Self {
            read_ok: true,
            write_ok: true,
            since: SimTime::ZERO,
            read_down_ms: 0,
            write_down_ms: 0,
            down_ms: 0,
            outage_start: None,
            outages: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilitySummary {
    pub overall_percent: f64,
    pub read_percent: f64,
    pub write_percent: f64,
    pub downtime_ms: u64,
    pub read_downtime_ms: u64,
    pub write_downtime_ms: u64,
    pub outages: Vec<(SimTime, SimTime)>,
}

impl AvailabilityTracker {
    fn accrue(&mut self, now: SimTime) {
        let dt = now.since(self.since);
        if !self.read_ok {
            self.read_down_ms += dt;
        }
        if !self.write_ok {
            self.write_down_ms += dt;
        }
        if !(self.read_ok && self.write_ok) {
            self.down_ms += dt;
        }
        self.since = now;
    }

    pub fn update(&mut self, now: SimTime, read_ok: bool, write_ok: bool) {
        if read_ok == self.read_ok && write_ok == self.write_ok {
            return;
        }
        self.accrue(now);
        let was_up = self.read_ok && self.write_ok;
        let is_up = read_ok && write_ok;
        if was_up && !is_up {
            self.outage_start = Some(now);
        } else if !was_up && is_up {
            if let Some(s) = self.outage_start.take() {
                self.outages.push((s, now));
            }
        }
        self.read_ok = read_ok;
        self.write_ok = write_ok;
    }

    pub fn finish(mut self, end: SimTime) -> AvailabilitySummary {
        self.accrue(end);
        if let Some(s) = self.outage_start.take() {
            self.outages.push((s, end));
        }
        let d = end.0;
        AvailabilitySummary {
            overall_percent: availability_percent(self.down_ms, d),
            read_percent: availability_percent(self.read_down_ms, d),
            write_percent: availability_percent(self.write_down_ms, d),
            downtime_ms: self.down_ms,
            read_downtime_ms: self.read_down_ms,
            write_downtime_ms: self.write_down_ms,
            outages: self.outages,
        }
    }
}

/// Target class for a mode, as inclusive ceilings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub rpo_label: &'static str,
    pub rto_label: &'static str,
    /// `None` means the RPO must be zero transactions.
    pub rpo_ceiling_ms: Option<u64>,
    /// `None` means the RTO must not exceed detection latency.
    pub rto_ceiling_ms: Option<u64>,
}

pub fn band_for(mode: DrMode) -> Band {
    match mode {
        DrMode::BackupAndRestore => Band {
            rpo_label: "hours (<= 24h)",
            rto_label: "24-48h",
            rpo_ceiling_ms: Some(DAY_MS),
            rto_ceiling_ms: Some(2 * DAY_MS),
        },
        DrMode::PilotLight => Band {
            rpo_label: "minutes (<= 60m)",
            rto_label: "hours (<= 24h)",
            rpo_ceiling_ms: Some(HOUR_MS),
            rto_ceiling_ms: Some(DAY_MS),
        },
        DrMode::WarmStandby => Band {
            rpo_label: "seconds (<= 60s)",
            rto_label: "minutes (<= 60m)",
            rpo_ceiling_ms: Some(60_000),
            rto_ceiling_ms: Some(HOUR_MS),
        },
        DrMode::ActiveActive => Band {
            rpo_label: "zero",
            rto_label: "detection only",
            rpo_ceiling_ms: None,
            rto_ceiling_ms: None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandVerdict {
    pub rpo_band: String,
    pub rto_band: String,
    pub rpo_ok: bool,
    pub rto_ok: bool,
}

pub fn classify(record: &RecoveryRecord) -> BandVerdict {
    let band = band_for(record.mode);
    let rpo_ok = match band.rpo_ceiling_ms {
        Some(c) => record.rpo_time_ms <= c,
        None => record.rpo_transactions == 0,
    };
    let rto_ok = match band.rto_ceiling_ms {
        Some(c) => record.rto_ms <= c,
        None => record.rto_ms <= record.detection_latency_ms(),
    };
    BandVerdict {
        rpo_band: band.rpo_label.to_string(),
        rto_band: band.rto_label.to_string(),
        rpo_ok,
        rto_ok,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedRecovery {
    pub record: RecoveryRecord,
    pub verdict: BandVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub disasters: Vec<ClassifiedRecovery>,
    pub worst_rto_ms: Option<u64>,
    pub worst_rpo_time_ms: Option<u64>,
    pub worst_rpo_transactions: Option<u64>,
    /// Disasters that never reached a serving standby.
    #[serde(default)]
    pub unrecovered: Vec<String>,
    /// `n/a`, `pass` or `fail`.
    pub verdict: String,
}

pub fn measure_rto_rpo(records: &[RecoveryRecord]) -> RecoverySummary {
    let disasters: Vec<_> = records
        .iter()
        .map(|r| ClassifiedRecovery {
            record: r.clone(),
            verdict: classify(r),
        })
        .collect();
    let verdict = if disasters.is_empty() {
        "n/a"
    } else if disasters
        .iter()
        .all(|d| d.verdict.rpo_ok && d.verdict.rto_ok)
    {
        "pass"
    } else {
        "fail"
    };
    RecoverySummary {
        worst_rto_ms: records.iter().map(|r| r.rto_ms).max(),
        worst_rpo_time_ms: records.iter().map(|r| r.rpo_time_ms).max(),
        worst_rpo_transactions: records.iter().map(|r| r.rpo_transactions).max(),
        unrecovered: Vec::new(),
        verdict: verdict.to_string(),
        disasters,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlaVerdict {
    pub target_percent: f64,
    pub budget_seconds: u64,
    pub budget: String,
    /// Yearly downtime the measured availability implies.
    pub projected_yearly_downtime: String,
    pub met: bool,
}

pub fn sla_verdict(target: SlaTarget, achieved_percent: f64) -> SlaVerdict {
    let budget = sla_to_downtime(target);
    let projected = downtime_over(achieved_percent, target.year_length_days * 86_400.0);
    SlaVerdict {
        target_percent: target.percent,
        budget_seconds: budget.total_seconds,
        budget: budget.formatted,
        projected_yearly_downtime: format_duration(projected),
        met: achieved_percent >= target.percent,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestStats {
    pub total: u64,
    pub succeeded: u64,
    pub failed_before_dispatch: u64,
    pub outcomes: BTreeMap<String, u64>,
    pub per_backend: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleAction {
    pub time: SimTime,
    pub decision: ScaleDecision,
    pub nodes_after: u32,
    pub containers: Vec<String>,
    pub applied: bool,
}

/// One autoscaler evaluation: the metric it saw and the node count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSample {
    pub time: SimTime,
    pub metric: f64,
    pub nodes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbStats {
    pub commits: u64,
    pub failovers: Vec<PromotionRecord>,
    pub final_master: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupStats {
    pub taken: u64,
    pub skipped: u64,
    pub delivered: u64,
    pub interrupted: u64,
}

/// Wall-clock data. Excluded from determinism comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool_version: String,
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub scenario_digest: String,
    pub seed: u64,
    pub mode: DrMode,
    pub duration_ms: u64,
    pub availability: AvailabilitySummary,
    pub sla: SlaVerdict,
    pub recovery: RecoverySummary,
    pub requests: RequestStats,
    pub scale_actions: Vec<ScaleAction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scale_samples: Vec<ScaleSample>,
    pub db: DbStats,
    pub backups: BackupStats,
    pub events_processed: u64,
    pub invariant_violations: Vec<String>,
    pub meta: ReportMeta,
}

impl RunReport {
    /// JSON with the `meta` field removed, for byte comparisons.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("meta");
        }
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenario      {} ({})",
            self.scenario,
            &self.scenario_digest[..12.min(self.scenario_digest.len())]
        );
        let _ = writeln!(s, "mode          {}", self.mode);
        let _ = writeln!(s, "seed          {}", self.seed);
        let _ = writeln!(
            s,
            "duration      {}",
            format_duration(self.duration_ms / 1000)
        );
        let a = &self.availability;
        let _ = writeln!(
            s,
            "availability  {:.5}% (read {:.5}%, write {:.5}%)",
            a.overall_percent, a.read_percent, a.write_percent
        );
        let _ = writeln!(
            s,
            "downtime      {} ms in {} outage(s)",
            a.downtime_ms,
            a.outages.len()
        );
        let _ = writeln!(
            s,
            "sla           target {}% budget {} projected {} -> {}",
            self.sla.target_percent,
            self.sla.budget,
            self.sla.projected_yearly_downtime,
            if self.sla.met { "met" } else { "missed" }
        );
        let r = &self.requests;
        let _ = writeln!(
            s,
            "requests      {} total, {} ok, {} failed before dispatch",
            r.total, r.succeeded, r.failed_before_dispatch
        );
        for (k, v) in &r.outcomes {
            let _ = writeln!(s, "  {k:<24} {v}");
        }
        let _ = writeln!(s, "per backend");
        for (k, v) in &r.per_backend {
            let _ = writeln!(s, "  {k:<24} {v}");
        }
        let _ = writeln!(s, "recovery      {}", self.recovery.verdict);
        for u in &self.recovery.unrecovered {
            let _ = writeln!(s, "  unrecovered {u}");
        }
        if !self.recovery.disasters.is_empty() {
            let _ = writeln!(
                s,
                "  {:<20} {:>6} {:>12} {:>12} {:>10}  {:<18} {:<18}",
                "mode", "zone", "rto_ms", "rpo_ms", "rpo_tx", "rpo band", "rto band"
            );
        }
        for d in &self.recovery.disasters {
            let rec = &d.record;
            let mark = |ok: bool| if ok { "ok" } else { "MISS" };
            let _ = writeln!(
                s,
                "  {:<20} {:>6} {:>12} {:>12} {:>10}  {:<18} {:<18}",
                rec.mode.label(),
                rec.failed_zone.to_string(),
                rec.rto_ms,
                rec.rpo_time_ms,
                rec.rpo_transactions,
                format!("{} {}", d.verdict.rpo_band, mark(d.verdict.rpo_ok)),
                format!("{} {}", d.verdict.rto_band, mark(d.verdict.rto_ok)),
            );
        }
        if !self.scale_actions.is_empty() {
            let _ = writeln!(s, "scale actions");
            for a in &self.scale_actions {
                let _ = writeln!(
                    s,
                    "  {:>10} {:?} -> {} nodes{}",
                    a.time.0,
                    a.decision,
                    a.nodes_after,
                    if a.applied { "" } else { " (dropped)" }
                );
            }
        }
        let _ = writeln!(
            s,
            "db            {} commits, {} failover(s), master {}",
            self.db.commits,
            self.db.failovers.len(),
            self.db.final_master.as_deref().unwrap_or("none")
        );
        let b = &self.backups;
        let _ = writeln!(
            s,
            "backups       {} taken, {} skipped, {} delivered, {} interrupted",
            b.taken, b.skipped, b.delivered, b.interrupted
        );
        if self.invariant_violations.is_empty() {
            let _ = writeln!(s, "invariants    ok");
        } else {
            let _ = writeln!(
                s,
                "invariants    {} violation(s)",
                self.invariant_violations.len()
            );
            for v in &self.invariant_violations {
                let _ = writeln!(s, "  {v}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbcluster::Lsn;
    use crate::topology::ZoneId;
    use proptest::prelude::*;

    #[test]
    fn reference_budgets() {
        assert_eq!(
            sla_to_downtime(SlaTarget::new(99.0)).formatted,
            "3d 15h 39m 29s"
        );
        assert_eq!(sla_to_downtime(SlaTarget::new(99.0)).total_seconds, 315_569);
        assert_eq!(
            sla_to_downtime(SlaTarget::new(99.9)).formatted,
            "8h 45m 56s"
        );
        assert_eq!(sla_to_downtime(SlaTarget::new(99.99)).formatted, "52m 35s");
        assert_eq!(sla_to_downtime(SlaTarget::new(100.0)).total_seconds, 0);
    }

    #[test]
    fn format_omits_zero() {
        assert_eq!(format_duration(86_400 + 5), "1d 5s");
        assert_eq!(format_duration(60), "1m");
        assert_eq!(format_duration(0), "0s");
    }

    #[test]
    fn one_percent_outage() {
        let mut t = AvailabilityTracker::default();
        t.update(SimTime(1_000_000), false, false);
        t.update(SimTime(1_864_000), true, true);
        let s = t.finish(SimTime(86_400_000));
        assert_eq!(s.downtime_ms, 864_000);
        assert!((s.overall_percent - 99.0).abs() < 1e-12);
        assert_eq!(s.outages, vec![(SimTime(1_000_000), SimTime(1_864_000))]);
    }

    #[test]
    fn read_write_separate() {
        let mut t = AvailabilityTracker::default();
        t.update(SimTime(10), true, false);
        t.update(SimTime(20), false, false);
        t.update(SimTime(30), true, true);
        let s = t.finish(SimTime(100));
        assert_eq!(s.write_downtime_ms, 20);
        assert_eq!(s.read_downtime_ms, 10);
        assert_eq!(s.downtime_ms, 20);
        assert_eq!(s.outages.len(), 1);
    }

    #[test]
    fn no_faults_full() {
        let s = AvailabilityTracker::default().finish(SimTime(5_000));
        assert_eq!(s.overall_percent, 100.0);
    }

    fn record(mode: DrMode, rto: u64, rpo_s: u64, tx: u64) -> RecoveryRecord {
        RecoveryRecord::compute(
            mode,
            ZoneId::A,
            SimTime(10_000_000),
            SimTime(10_002_500),
            SimTime(10_000_000 + rto),
            Lsn(100 + tx),
            Lsn(100),
            SimTime(10_000_000 - rpo_s * 1000),
            vec![],
        )
    }

    #[test]
    fn pilot_light_bands() {
        let v = classify(&record(DrMode::PilotLight, 70_500, 1_380, 5));
        assert!(v.rpo_ok && v.rto_ok);
        let v = classify(&record(DrMode::PilotLight, 70_500, 3_601, 5));
        assert!(!v.rpo_ok);
    }

    #[test]
    fn active_active_band() {
        let v = classify(&record(DrMode::ActiveActive, 2_500, 0, 0));
        assert!(v.rpo_ok && v.rto_ok);
        let v = classify(&record(DrMode::ActiveActive, 2_501, 0, 0));
        assert!(!v.rto_ok);
    }

    #[test]
    fn empty_summary() {
        let s = measure_rto_rpo(&[]);
        assert_eq!(s.verdict, "n/a");
        assert_eq!(s.worst_rto_ms, None);
    }

    proptest! {
        #[test]
        fn downtime_monotone(a in 0.001f64..100.0, b in 0.001f64..100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(
                sla_to_downtime(SlaTarget::new(lo)).total_seconds
                    >= sla_to_downtime(SlaTarget::new(hi)).total_seconds
            );
        }

        #[test]
        fn round_trip(period_s in 1u64..400_000_000, frac in 0.0f64..1.0) {
            let down_s = (period_s as f64 * frac).floor() as u64;
            let avail = availability_percent(down_s * 1000, period_s * 1000);
            let back = downtime_over(avail, period_s as f64);
            prop_assert!(back.abs_diff(down_s) <= 1, "{} vs {}", back, down_s);
        }
    }
}
