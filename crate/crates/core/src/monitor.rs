//! Runtime verification over traces.
//!
//! [`MonitorState`] is rebuilt purely from trace records, so the same code
//! runs online (fed after every dispatched event) and offline (fed from a
//! trace file grouped by event index). A violation is reported once, at the
//! checkpoint where it first appears; it is reported again only if it clears
//! and later reappears.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::gvh::{SlotKey, Value};
use crate::icp::{mid, remaining_critical, Loc};
use crate::net::{MessageMode, Region};
use crate::physics::Geometry;
use crate::trace::{RecordBody, Trace, TraceRecord};
use crate::types::{Actor, Pid, Point, SimTime, ZoneName, ZoneSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    TrafficSafety,
    MutexSafety,
    IcpKey,
    RequestShape,
    SingleWriter,
    AvoidSafety,
    GeocastExclusion,
    GeocastInclusion,
    GeocastLatency,
    RegistrationAgreement,
    RegistrationSoundness,
}

impl Property {
    pub fn label(self) -> &'static str {
        match self {
            Property::TrafficSafety => "traffic_safety",
            Property::MutexSafety => "mutex_safety",
            Property::IcpKey => "icp_key",
            Property::RequestShape => "request_shape",
            Property::SingleWriter => "single_writer",
            Property::AvoidSafety => "avoid_safety",
            Property::GeocastExclusion => "geocast_exclusion",
            Property::GeocastInclusion => "geocast_inclusion",
            Property::GeocastLatency => "geocast_latency",
            Property::RegistrationAgreement => "registration_agreement",
            Property::RegistrationSoundness => "registration_soundness",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub property: Property,
    pub time: SimTime,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pids: Vec<Pid>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zones: Vec<ZoneName>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub msgs: Vec<u64>,
    pub detail: String,
}

impl Violation {
    fn key(&self) -> (Property, Vec<Pid>, Vec<ZoneName>, Vec<u64>) {
        (self.property, self.pids.clone(), self.zones.clone(), self.msgs.clone())
    }
}

#[derive(Debug, Clone, Default)]
struct ProcView {
    pose: Option<Point>,
    route: Vec<ZoneName>,
    loc: Option<Loc>,
    myseq: Vec<ZoneName>,
    crit_set: ZoneSet,
    request: Option<Vec<ZoneName>>,
    mux_failed: bool,
    avoid: Option<Region>,
    writers: BTreeMap<SlotKey, String>,
}

/// Event-time safety checker.
#[derive(Debug, Clone)]
pub struct MonitorState {
    geom: Geometry,
    procs: BTreeMap<Pid, ProcView>,
    writer_faults: Vec<Violation>,
    active: BTreeSet<(Property, Vec<Pid>, Vec<ZoneName>, Vec<u64>)>,
}

impl MonitorState {
    pub fn new(geom: Geometry) -> Self {
        MonitorState {
            geom,
            procs: BTreeMap::new(),
            writer_faults: Vec::new(),
            active: BTreeSet::new(),
        }
    }

    pub fn observe(&mut self, r: &TraceRecord) {
        let Actor::Process(pid) = r.pid else {
            return;
        };
        match &r.body {
            RecordBody::Spawn { x, y, route, .. } => {
                let p = self.procs.entry(pid).or_default();
                p.pose = Some(Point::new(*x, *y));
                p.route = route.clone();
                p.myseq = route.clone();
            }
            RecordBody::MotionTick { x, y, .. } => {
                self.procs.entry(pid).or_default().pose = Some(Point::new(*x, *y));
            }
            RecordBody::AppLoc { to, myseq, .. } => {
                let p = self.procs.entry(pid).or_default();
                p.loc = Loc::from_label(to);
                p.myseq = myseq.clone();
            }
            RecordBody::Done => {
                let p = self.procs.entry(pid).or_default();
                p.pose = None;
            }
            RecordBody::GvhPublish {
                key,
                value,
                writer,
                ..
            } => {
                let p = self.procs.entry(pid).or_default();
                match p.writers.get(key) {
                    Some(w) if w != writer => self.writer_faults.push(Violation {
                        property: Property::SingleWriter,
                        time: r.time,
                        pids: vec![pid],
                        zones: Vec::new(),
                        msgs: Vec::new(),
                        detail: format!("{key} written by {writer} after {w}"),
                    }),
                    Some(_) => {}
                    None => {
                        p.writers.insert(key.clone(), writer.clone());
                    }
                }
                match (key.instance.as_str(), key.field.as_str()) {
                    ("mux", "crit_set") => {
                        p.crit_set = value.as_zones().map(|z| z.iter().cloned().collect()).unwrap_or_default()
                    }
                    ("mux", "request") => p.request = value.as_zones().map(|z| z.to_vec()),
                    ("mux", "failed") => p.mux_failed = value.as_bool().unwrap_or(false),
                    ("motion", "avoid") => {
                        p.avoid = match value {
                            Value::Region(r) => Some(*r),
                            _ => None,
                        }
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }

    /// Every property violated in the current state.
    pub fn current(&self, time: SimTime) -> Vec<Violation> {
        let mut out = Vec::new();
        let v = |property, pids: Vec<Pid>, zones: Vec<ZoneName>, detail: String| Violation {
            property,
            time,
            pids,
            zones,
            msgs: Vec::new(),
            detail,
        };

        let mut occupancy: BTreeMap<ZoneName, Vec<Pid>> = BTreeMap::new();
        for (pid, p) in &self.procs {
            if let Some(z) = p.pose.and_then(|pt| self.geom.zone_of(pt)) {
                if self.geom.is_critical(&z.name) {
                    occupancy.entry(z.name.clone()).or_default().push(*pid);
                }
            }
        }
        for (zone, pids) in occupancy {
            if pids.len() > 1 {
                let detail = format!("{} vehicles in zone {zone}", pids.len());
                out.push(v(Property::TrafficSafety, pids, vec![zone], detail));
            }
        }

        let holders: Vec<(&Pid, &ProcView)> = self.procs.iter().filter(|(_, p)| !p.crit_set.is_empty()).collect();
        for (i, (a, pa)) in holders.iter().enumerate() {
            for (b, pb) in &holders[i + 1..] {
                let shared: Vec<ZoneName> = pa.crit_set.intersection(&pb.crit_set).cloned().collect();
                if !shared.is_empty() {
                    let detail = format!("{a} and {b} both hold {shared:?}");
                    out.push(v(Property::MutexSafety, vec![**a, **b], shared, detail));
                }
            }
        }

        for (pid, p) in &self.procs {
            match p.loc {
                Some(Loc::MoveWait) => {
                    let need = remaining_critical(&self.geom, &p.myseq);
                    if !need.is_subset(&p.crit_set) {
                        let missing: Vec<ZoneName> = need.difference(&p.crit_set).cloned().collect();
                        let detail = format!("{pid} in move_wait without {missing:?}");
                        out.push(v(Property::IcpKey, vec![*pid], missing, detail));
                    }
                }
                Some(Loc::MutexWait) if !p.mux_failed => {
                    let expect = mid(&p.route).unwrap_or_default();
                    let got = p.request.clone().unwrap_or_default();
                    let as_set = |z: &[ZoneName]| z.iter().cloned().collect::<ZoneSet>();
                    if as_set(&expect) != as_set(&got) && !(expect.is_empty() && got.is_empty()) {
                        let detail = format!("{pid} requested {got:?}, route needs {expect:?}");
                        out.push(v(Property::RequestShape, vec![*pid], expect, detail));
                    }
                }
                _ => {}
            }
            if let (Some(a), Some(pose)) = (p.avoid, p.pose) {
                if a.contains(pose) {
                    out.push(v(Property::AvoidSafety, vec![*pid], Vec::new(), format!("{pid} inside its avoid region")));
                }
            }
        }
        out
    }

    /// Reports violations that appeared since the previous call.
    pub fn check(&mut self, time: SimTime) -> Vec<Violation> {
        let now = self.current(time);
        let keys: BTreeSet<_> = now.iter().map(Violation::key).collect();
        let mut fresh: Vec<Violation> = std::mem::take(&mut self.writer_faults);
        fresh.extend(now.into_iter().filter(|v| !self.active.contains(&v.key())));
        self.active = keys;
        fresh
    }
}

/// Replays a trace through the event-time checker, reproducing the online
/// monitor's checkpoints.
pub fn replay(trace: &Trace) -> Vec<Violation> {
    let mut m = MonitorState::new(trace.header.scenario.geometry.clone());
    let mut out = Vec::new();
    let mut i = 0;
    let recs = &trace.records;
    while i < recs.len() {
        let ev = recs[i].ev;
        let mut time = recs[i].time;
        while i < recs.len() && recs[i].ev == ev {
            if recs[i].body.kind() != "violation" {
                m.observe(&recs[i]);
            }
            time = recs[i].time;
            i += 1;
        }
        out.extend(m.check(time));
    }
    out
}

/// Violations logged by the online monitor.
pub fn logged_violations(records: &[TraceRecord]) -> Vec<Violation> {
    records
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::Violation(v) => Some(v.clone()),
            _ => None,
        })
        .collect()
}

/// Piecewise-constant position history of every process.
struct Tracks {
    points: BTreeMap<Pid, Vec<(SimTime, Option<Point>)>>,
}

impl Tracks {
    fn build(records: &[TraceRecord]) -> Tracks {
        let mut points: BTreeMap<Pid, Vec<(SimTime, Option<Point>)>> = BTreeMap::new();
        for r in records {
            let Some(pid) = r.pid() else { continue };
            let p = match &r.body {
                RecordBody::Spawn { x, y, .. } | RecordBody::MotionTick { x, y, .. } => Some(Point::new(*x, *y)),
                RecordBody::Done => None,
                _ => continue,
            };
            points.entry(pid).or_default().push((r.time, p));
        }
        Tracks { points }
    }

    fn at(&self, pid: Pid, t: SimTime) -> Option<Point> {
        let v = self.points.get(&pid)?;
        let idx = v.partition_point(|(ts, _)| *ts <= t);
        if idx == 0 {
            None
        } else {
            v[idx - 1].1
        }
    }

    /// Positions held at some instant in `[t0, t1]`.
    fn during(&self, pid: Pid, t0: SimTime, t1: SimTime) -> Vec<Option<Point>> {
        let mut out = vec![self.at(pid, t0)];
        if let Some(v) = self.points.get(&pid) {
            out.extend(v.iter().filter(|(t, _)| *t > t0 && *t <= t1).map(|(_, p)| *p));
        }
        out
    }
}

/// Offline geocast check. Exclusion is always checked and so is the
/// delivery deadline; inclusion only when `assume_timely` holds (no loss, no
/// crashes, every attempt delivered within d/2).
pub fn check_geocast_trace(trace: &Trace) -> Vec<Violation> {
    let net = &trace.header.scenario.net;
    let crashed: BTreeSet<Pid> = trace
        .records
        .iter()
        .filter(|r| r.body.kind() == "crash")
        .filter_map(|r| r.pid())
        .collect();
    let tracks = Tracks::build(&trace.records);
    let mut deliveries: BTreeMap<u64, BTreeMap<Pid, SimTime>> = BTreeMap::new();
    for r in &trace.records {
        if let (RecordBody::MsgDeliver { msg_id, .. }, Some(dst)) = (&r.body, r.pid()) {
            deliveries.entry(*msg_id).or_default().entry(dst).or_insert(r.time);
        }
    }
    let everyone: Vec<Pid> = tracks.points.keys().copied().collect();
    let mut out = Vec::new();
    for r in &trace.records {
        let RecordBody::MsgSend {
            msg_id,
            attempt: 0,
            mode: MessageMode::Geocast { region, deadline },
            ..
        } = &r.body
        else {
            continue;
        };
        let Some(src) = r.pid() else { continue };
        let (t0, d) = (r.time, *deadline);
        let t1 = t0 + d;
        let timely = net.loss_rate == 0.0 && crashed.is_empty() && net.max_delay() * 2 <= d;
        let got = deliveries.get(msg_id);
        for &p in everyone.iter().filter(|p| **p != src) {
            let trail = tracks.during(p, t0, t1);
            let outside = trail.iter().all(|q| q.map(|q| !region.contains(q)).unwrap_or(true));
            let inside = trail.iter().all(|q| q.map(|q| region.contains(q)).unwrap_or(false));
            let delivered = got.and_then(|g| g.get(&p)).copied();
            let mk = |property, detail: String| Violation {
                property,
                time: delivered.unwrap_or(t1),
                pids: vec![src, p],
                zones: Vec::new(),
                msgs: vec![*msg_id],
                detail,
            };
            if let Some(at) = delivered {
                if outside {
                    out.push(mk(Property::GeocastExclusion, format!("{p} was outside the region yet got it at {at}")));
                }
                if at > t1 {
                    out.push(mk(Property::GeocastLatency, format!("{p} got it at {at}, deadline {t1}")));
                }
            } else if timely && inside && tracks.at(p, t1).is_some() {
                out.push(mk(Property::GeocastInclusion, format!("{p} stayed inside but never received it")));
            }
        }
    }
    out
}

/// A finalized registration list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegList {
    pub pid: Pid,
    pub ts: SimTime,
    pub members: Vec<Pid>,
}

/// Every non-null `reg.rList` publish in the trace.
pub fn registration_lists(records: &[TraceRecord]) -> Vec<RegList> {
    records
        .iter()
        .filter_map(|r| match (&r.body, r.pid()) {
            (
                RecordBody::GvhPublish {
                    key,
                    value: Value::PidList(v),
                    ..
                },
                Some(pid),
            ) if key.instance == "reg" && key.field == "rList" => Some(RegList {
                pid,
                ts: r.time,
                members: v.clone(),
            }),
            _ => None,
        })
        .collect()
}

/// Offline registration check. Soundness always; agreement only when
/// `agreement_applies` (loss-free, crash-free runs).
pub fn check_registration_trace(trace: &Trace, d: u64, d1: u64) -> Vec<Violation> {
    let net = &trace.header.scenario.net;
    let crashed = trace.records.iter().any(|r| r.body.kind() == "crash");
    let agreement_applies = net.loss_rate == 0.0 && !crashed;
    let lists = registration_lists(&trace.records);
    let mut invocations: BTreeMap<Pid, Vec<SimTime>> = BTreeMap::new();
    for r in &trace.records {
        if let (RecordBody::Invoke { primitive, op, .. }, Some(pid)) = (&r.body, r.pid()) {
            if primitive == "reg" && matches!(op.as_str(), "do_register" | "rerun" | "reconfirm") {
                invocations.entry(pid).or_default().push(r.time);
            }
        }
    }
    let mut out = Vec::new();
    for l in &lists {
        for m in &l.members {
            let ok = invocations
                .get(m)
                .map(|ts| ts.iter().any(|t| *t <= l.ts && l.ts.saturating_sub(*t) <= d1))
                .unwrap_or(false);
            if !ok {
                out.push(Violation {
                    property: Property::RegistrationSoundness,
                    time: l.ts,
                    pids: vec![l.pid, *m],
                    zones: Vec::new(),
                    msgs: Vec::new(),
                    detail: format!("{m} listed by {} at {} without registering in the last {d1}ms", l.pid, l.ts),
                });
            }
        }
    }
    if agreement_applies {
        for (i, a) in lists.iter().enumerate() {
            for b in &lists[i + 1..] {
                if a.pid == b.pid || a.ts.saturating_sub(b.ts).max(b.ts.saturating_sub(a.ts)) > d {
                    continue;
                }
                let sa: BTreeSet<Pid> = a.members.iter().copied().collect();
                let sb: BTreeSet<Pid> = b.members.iter().copied().collect();
                if sa != sb {
                    out.push(Violation {
                        property: Property::RegistrationAgreement,
                        time: a.ts.max(b.ts),
                        pids: vec![a.pid, b.pid],
                        zones: Vec::new(),
                        msgs: Vec::new(),
                        detail: format!("{:?} at {} vs {:?} at {}", a.members, a.ts, b.members, b.ts),
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleProgress {
    pub pid: Pid,
    pub route: Vec<ZoneName>,
    pub start_at: SimTime,
    pub done_at: Option<SimTime>,
    pub duration_ms: Option<u64>,
    /// Route length over top speed.
    pub lower_bound_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutexWait {
    pub pid: Pid,
    pub requested_at: SimTime,
    pub granted_at: Option<SimTime>,
    pub wait_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub vehicles: Vec<VehicleProgress>,
    pub mutex_waits: Vec<MutexWait>,
    pub max_duration_ms: Option<u64>,
    pub max_mutex_wait_ms: Option<u64>,
    pub not_departed: Vec<Pid>,
    pub assumptions_held: bool,
}

/// Route length in meters: arrival center through every zone center.
pub fn route_length(geom: &Geometry, route: &[ZoneName]) -> f64 {
    route
        .windows(2)
        .filter_map(|w| Some(geom.center(&w[0])?.dist(geom.center(&w[1])?)))
        .sum()
}

pub fn progress_report(trace: &Trace) -> ProgressReport {
    let sc = &trace.header.scenario;
    let mut vehicles = Vec::new();
    let mut done: BTreeMap<Pid, SimTime> = BTreeMap::new();
    let mut crashed = false;
    let mut requests: Vec<MutexWait> = Vec::new();
    let mut open: BTreeMap<Pid, usize> = BTreeMap::new();
    for r in &trace.records {
        let Some(pid) = r.pid() else { continue };
        match &r.body {
            RecordBody::Spawn { start_at, route, .. } if !route.is_empty() => {
                let lb = route_length(&sc.geometry, route) / sc.kinematics.v_max * 1000.0;
                vehicles.push(VehicleProgress {
                    pid,
                    route: route.clone(),
                    start_at: *start_at,
                    done_at: None,
                    duration_ms: None,
                    lower_bound_ms: lb.floor() as u64,
                });
            }
            RecordBody::AppLoc { to, .. } if to == "done" => {
                done.insert(pid, r.time);
            }
            RecordBody::Crash => crashed = true,
            RecordBody::Invoke { primitive, op, .. } if primitive == "mux" && op == "do_mutex" => {
                open.insert(pid, requests.len());
                requests.push(MutexWait {
                    pid,
                    requested_at: r.time,
                    granted_at: None,
                    wait_ms: None,
                });
            }
            RecordBody::GvhPublish {
                key,
                value: Value::Bool(true),
                ..
            } if key.instance == "mux" && key.field == "crit" => {
                if let Some(i) = open.remove(&pid) {
                    requests[i].granted_at = Some(r.time);
                    requests[i].wait_ms = Some(r.time.saturating_sub(requests[i].requested_at));
                }
            }
            _ => {}
        }
    }
    for v in &mut vehicles {
        if let Some(t) = done.get(&v.pid) {
            v.done_at = Some(*t);
            v.duration_ms = Some(t.saturating_sub(v.start_at));
        }
    }
    ProgressReport {
        max_duration_ms: vehicles.iter().filter_map(|v| v.duration_ms).max(),
        max_mutex_wait_ms: requests.iter().filter_map(|w| w.wait_ms).max(),
        not_departed: vehicles.iter().filter(|v| v.done_at.is_none()).map(|v| v.pid).collect(),
        assumptions_held: sc.net.loss_rate == 0.0 && !crashed,
        vehicles,
        mutex_waits: requests,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::zones;

    fn rec(time: u64, pid: u32, body: RecordBody) -> TraceRecord {
        TraceRecord {
            time: SimTime(time),
            ev: time,
            pid: Actor::Process(Pid(pid)),
            body,
        }
    }

    fn spawn(pid: u32, x: f64, y: f64) -> TraceRecord {
        rec(
            0,
            pid,
            RecordBody::Spawn {
                start_at: SimTime(0),
                x,
                y,
                heading: 0.0,
                role: "icp".into(),
                route: Vec::new(),
            },
        )
    }

    fn crit_set(time: u64, pid: u32, z: &[&str]) -> TraceRecord {
        rec(
            time,
            pid,
            RecordBody::GvhPublish {
                key: SlotKey::new("mux", "crit_set"),
                value: Value::ZoneList(z.iter().map(|s| ZoneName::from(*s)).collect()),
                version: 1,
                writer: "mux".into(),
            },
        )
    }

    #[test]
    fn two_vehicles_in_one_zone() {
        let mut m = MonitorState::new(Geometry::fourway());
        m.observe(&spawn(0, -0.5, -0.5));
        m.observe(&spawn(1, -0.4, -0.6));
        let v = m.check(SimTime(0));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].property, Property::TrafficSafety);
        assert_eq!(v[0].zones, vec![ZoneName::from("A")]);
        // same state again: already reported
        assert!(m.check(SimTime(10)).is_empty());
    }

    #[test]
    fn overlapping_crit_sets() {
        let mut m = MonitorState::new(Geometry::fourway());
        m.observe(&crit_set(5, 0, &["A"]));
        m.observe(&crit_set(5, 1, &["A"]));
        let v = m.check(SimTime(5));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].property, Property::MutexSafety);
        assert_eq!(v[0].pids, vec![Pid(0), Pid(1)]);
    }

    #[test]
    fn move_wait_without_zone_is_key_violation() {
        let mut m = MonitorState::new(Geometry::fourway());
        m.observe(&crit_set(5, 0, &["A"]));
        m.observe(&rec(
            5,
            0,
            RecordBody::AppLoc {
                from: "mutex_wait".into(),
                to: "move_wait".into(),
                myseq: ["A0", "A", "C", "C1"].iter().map(|s| ZoneName::from(*s)).collect(),
            },
        ));
        let v = m.check(SimTime(5));
        assert_eq!(v[0].property, Property::IcpKey);
        assert_eq!(v[0].zones, vec![ZoneName::from("C")]);
        assert_eq!(zones(["C"]).len(), 1);
    }

    #[test]
    fn clean_state_has_nothing() {
        let mut m = MonitorState::new(Geometry::fourway());
        m.observe(&spawn(0, -0.5, -2.0));
        m.observe(&spawn(1, 0.5, 2.0));
        m.observe(&crit_set(1, 0, &["A"]));
        m.observe(&crit_set(1, 1, &["D"]));
        assert!(m.check(SimTime(1)).is_empty());
    }

    #[test]
    fn conflicting_writers_flagged() {
        let mut m = MonitorState::new(Geometry::fourway());
        m.observe(&crit_set(1, 0, &["A"]));
        let mut r = crit_set(2, 0, &["B"]);
        if let RecordBody::GvhPublish { writer, .. } = &mut r.body {
            *writer = "app".into();
        }
        m.observe(&r);
        let v = m.check(SimTime(2));
        assert_eq!(v[0].property, Property::SingleWriter);
    }
}
