//! Rebuilds availability from an exported trace alone. It shares no code
//! with the online tracker, so agreement between the two is a real check.

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::engine::TraceRecord;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("trace does not start with an Init record")]
    IncompleteTrace,
    #[error("malformed effect at seq {seq}: {detail}")]
    Malformed { seq: u64, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Replayed {
    pub downtime_ms: u64,
    pub read_downtime_ms: u64,
    pub write_downtime_ms: u64,
    pub requests: u64,
    pub per_backend: BTreeMap<String, u64>,
    pub outcomes: BTreeMap<String, u64>,
}

#[derive(Default)]
struct State {
    containers: BTreeMap<String, (String, String, bool)>,
    backends: BTreeMap<String, (String, bool)>,
    routable: Vec<String>,
    db: BTreeMap<String, (bool, bool)>,
    volumes: BTreeMap<String, (bool, Vec<String>, String)>,
    primary: String,
    link_up: bool,
}

impl State {
    fn up(&self, id: &str) -> bool {
        self.containers.get(id).is_some_and(|c| c.2)
    }

    fn role_in(&self, zone: Option<&str>, role: &str) -> (bool, bool) {
        let mut exists = false;
        let mut serving = false;
        for (z, r, up) in self.containers.values() {
            if r == role && zone.is_none_or(|zz| zz == z) {
                exists = true;
                serving |= *up;
            }
        }
        (exists, serving)
    }

    fn entry(&self, zone: &str) -> bool {
        if !self.routable.iter().any(|z| z == zone) {
            return false;
        }
        let (fronts, front_up) = self.role_in(Some(zone), "balancer_front");
        if fronts && !front_up {
            return false;
        }
        self.backends
            .iter()
            .any(|(id, (z, eligible))| z == zone && *eligible && self.up(id))
    }

    fn storage(&self, zone: &str, write: bool) -> bool {
        match self.volumes.get(zone) {
            None => !self.role_in(Some(zone), "storage_brick").0,
            Some((started, bricks, quorum)) => {
                let up = bricks.iter().filter(|b| self.up(b)).count();
                let need = match quorum.as_str() {
                    "all" => bricks.len(),
                    "one" => 1,
                    _ => bricks.len() / 2 + 1,
                };
                *started && if write { up >= need } else { up >= 1 }
            }
        }
    }

    fn predicates(&self) -> (bool, bool) {
        let (routers, router_up) = self.role_in(None, "db_router");
        if routers && !router_up {
            return (false, false);
        }
        // A replica outside the primary zone is reachable only over the link.
        let live = |id: &str, &(_, attached): &(bool, bool)| {
            attached
                && self.up(id)
                && self
                    .containers
                    .get(id)
                    .is_some_and(|c| c.0 == self.primary || self.link_up)
        };
        let master = self.db.iter().any(|(id, f)| f.0 && live(id, f));
        let any = self.db.iter().any(|(id, f)| live(id, f));
        let zones: Vec<&String> = self.routable.iter().collect();
        let read = any
            && zones
                .iter()
                .any(|z| self.entry(z) && self.storage(z, false));
        let write = master && zones.iter().any(|z| self.entry(z) && self.storage(z, true));
        (read, write)
    }

    fn apply(&mut self, seq: u64, effect: &Value) -> Result<(), ReplayError> {
        let bad = |d: &str| ReplayError::Malformed {
            seq,
            detail: d.to_string(),
        };
        let obj = effect
            .as_object()
            .ok_or_else(|| bad("effect is not an object"))?;
        let (key, v) = obj.iter().next().ok_or_else(|| bad("empty effect"))?;
        let s = |k: &str| {
            v.get(k)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| bad(k))
        };
        let b = |k: &str| v.get(k).and_then(Value::as_bool).ok_or_else(|| bad(k));
        match key.as_str() {
            "container" => {
                self.containers
                    .insert(s("id")?, (s("zone")?, s("role")?, b("up")?));
            }
            "backend" => {
                self.backends.insert(s("id")?, (s("zone")?, b("eligible")?));
            }
            "backend_removed" => {
                self.backends.remove(&s("id")?);
            }
            "routable" => {
                self.routable = v
                    .get("zones")
                    .and_then(Value::as_array)
                    .ok_or_else(|| bad("zones"))?
                    .iter()
                    .filter_map(|z| z.as_str().map(str::to_string))
                    .collect();
            }
            "primary" => self.primary = s("zone")?,
            "link" => self.link_up = b("up")?,
            "db" => {
                self.db.insert(s("id")?, (b("master")?, b("attached")?));
            }
            "volume" => {
                let bricks = v
                    .get("bricks")
                    .and_then(Value::as_array)
                    .ok_or_else(|| bad("bricks"))?
                    .iter()
                    .filter_map(|x| x.as_str().map(str::to_string))
                    .collect();
                self.volumes
                    .insert(s("zone")?, (b("started")?, bricks, s("quorum")?));
            }
            other => return Err(bad(&format!("unknown effect {other}"))),
        }
        Ok(())
    }
}

/// Replays `trace` over `[0, duration_ms)`.
pub fn replay(trace: &[TraceRecord], duration_ms: u64) -> Result<Replayed, ReplayError> {
    let first = trace.first().ok_or(ReplayError::IncompleteTrace)?;
    if first.kind != "Init" {
        return Err(ReplayError::IncompleteTrace);
    }
    let mut st = State::default();
    let mut out = Replayed::default();
    let mut last = 0u64;
    let mut ok = (true, true);
    for rec in trace {
        let t = rec.time.min(duration_ms);
        let span = t - last.min(t);
        if !ok.0 {
            out.read_downtime_ms += span;
        }
        if !ok.1 {
            out.write_downtime_ms += span;
        }
        if !(ok.0 && ok.1) {
            out.downtime_ms += span;
        }
        last = t;
        if let Some(effects) = rec.payload.get("effects").and_then(Value::as_array) {
            for e in effects {
                st.apply(rec.seq, e)?;
            }
        }
        if rec.payload.get("event").and_then(Value::as_str) == Some("arrival") {
            out.requests += 1;
            if let Some(b) = rec.payload.get("backend").and_then(Value::as_str) {
                *out.per_backend.entry(b.to_string()).or_default() += 1;
            }
            if let Some(o) = rec.payload.get("outcome").and_then(Value::as_str) {
                *out.outcomes.entry(o.to_string()).or_default() += 1;
            }
        }
        ok = st.predicates();
    }
    let span = duration_ms - last.min(duration_ms);
    if !ok.0 {
        out.read_downtime_ms += span;
    }
    if !ok.1 {
        out.write_downtime_ms += span;
    }
    if !(ok.0 && ok.1) {
        out.downtime_ms += span;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(time: u64, seq: u64, kind: &str, effects: Value) -> TraceRecord {
        TraceRecord {
            time,
            seq,
            kind: kind.into(),
            payload: json!({ "effects": effects }),
        }
    }

    fn init() -> TraceRecord {
        rec(
            0,
            0,
            "Init",
            json!([
                {"container": {"id": "web-1", "zone": "A", "role": "web_server", "up": true}},
                {"container": {"id": "db-1", "zone": "A", "role": "db_master", "up": true}},
                {"backend": {"id": "web-1", "zone": "A", "eligible": true}},
                {"routable": {"zones": ["A"]}},
                {"primary": {"zone": "A"}},
                {"link": {"up": true}},
                {"db": {"id": "db-1", "master": true, "attached": true}}
            ]),
        )
    }

    #[test]
    fn missing_init() {
        assert_eq!(replay(&[], 10), Err(ReplayError::IncompleteTrace));
        let r = rec(5, 1, "FaultTrigger", json!([]));
        assert_eq!(replay(&[r], 10), Err(ReplayError::IncompleteTrace));
    }

    #[test]
    fn outage_window() {
        let t = vec![
            init(),
            rec(
                100,
                1,
                "FaultTrigger",
                json!([{"container": {"id": "db-1", "zone": "A", "role": "db_master", "up": false}}]),
            ),
            rec(
                250,
                2,
                "RecoveryStep",
                json!([{"container": {"id": "db-1", "zone": "A", "role": "db_master", "up": true}}]),
            ),
        ];
        let r = replay(&t, 1000).unwrap();
        assert_eq!(r.downtime_ms, 150);
        assert_eq!(r.read_downtime_ms, 150);
    }

    #[test]
    fn quorum_rules() {
        let mut st = State::default();
        for (i, up) in [true, true, false].iter().enumerate() {
            st.containers
                .insert(format!("b{i}"), ("A".into(), "storage_brick".into(), *up));
        }
        st.volumes.insert(
            "A".into(),
            (
                true,
                vec!["b0".into(), "b1".into(), "b2".into()],
                "majority".into(),
            ),
        );
        assert!(st.storage("A", true));
        st.volumes.get_mut("A").unwrap().2 = "all".into();
        assert!(!st.storage("A", true));
        assert!(st.storage("A", false));
    }
}
