//! 2D world: zone geometry, holonomic robot kinematics and the motion
//! control primitive.
//!
//! Robots are discs of radius `robot_radius` moving at most `v_max` toward a
//! target. An optional avoid disc is circumnavigated with a single tangent
//! waypoint; when no such detour exists the robot stalls and the motion fails
//! after `stall_timeout_ms`.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::Region;
use crate::types::{Pid, Point, SimTime, ZoneName};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            heading: normalize_heading(heading),
        }
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Maps an angle into `(-π, π]`.
pub fn normalize_heading(h: f64) -> f64 {
    if !h.is_finite() {
        return 0.0;
    }
    let mut a = libm::fmod(h, 2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

pub fn heading_towards(from: Point, to: Point) -> f64 {
    normalize_heading(libm::atan2(to.y - from.y, to.x - from.x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneKind {
    Arrival,
    Critical,
    Departure,
}

/// Axis-aligned rectangle, closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub const fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn area(&self) -> f64 {
        (self.max_x - self.min_x) * (self.max_y - self.min_y)
    }

    pub fn center(&self) -> Point {
        Point::new((self.min_x + self.max_x) / 2.0, (self.min_y + self.max_y) / 2.0)
    }

    /// True when the interiors intersect (touching edges do not count).
    pub fn overlaps(&self, o: &Rect) -> bool {
        self.min_x < o.max_x && o.min_x < self.max_x && self.min_y < o.max_y && o.min_y < self.max_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub name: ZoneName,
    pub footprint: Rect,
    pub kind: ZoneKind,
}

/// One routing-table entry: the critical zones traversed between an arrival
/// and a departure zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub arrival: ZoneName,
    pub departure: ZoneName,
    pub via: Vec<ZoneName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub zones: Vec<Zone>,
    pub routes: Vec<RouteEntry>,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry::fourway()
    }
}

impl Geometry {
    /// The default four-way intersection: 1 m critical quadrants around the
    /// origin (A south-west, C north-west, D north-east, B south-east) with
    /// 2 m approach lanes capped by the arrival and departure zones.
    pub fn fourway() -> Self {
        use ZoneKind::*;
        let z = |n: &str, r: Rect, k| Zone {
            name: ZoneName::from(n),
            footprint: r,
            kind: k,
        };
        let zones = vec![
            z("A", Rect::new(-1.0, -1.0, 0.0, 0.0), Critical),
            z("B", Rect::new(0.0, -1.0, 1.0, 0.0), Critical),
            z("C", Rect::new(-1.0, 0.0, 0.0, 1.0), Critical),
            z("D", Rect::new(0.0, 0.0, 1.0, 1.0), Critical),
            z("A0", Rect::new(-1.0, -3.0, 0.0, -1.0), Arrival),
            z("B0", Rect::new(1.0, -1.0, 3.0, 0.0), Arrival),
            z("C0", Rect::new(-3.0, 0.0, -1.0, 1.0), Arrival),
            z("D0", Rect::new(0.0, 1.0, 1.0, 3.0), Arrival),
            z("A1", Rect::new(-3.0, -1.0, -1.0, 0.0), Departure),
            z("B1", Rect::new(0.0, -3.0, 1.0, -1.0), Departure),
            z("C1", Rect::new(-1.0, 1.0, 0.0, 3.0), Departure),
            z("D1", Rect::new(1.0, 0.0, 3.0, 1.0), Departure),
        ];
        let table: [(&str, &str, &[&str]); 12] = [
            ("A0", "A1", &["A"]),
            ("A0", "C1", &["A", "C"]),
            ("A0", "D1", &["A", "C", "D"]),
            ("C0", "C1", &["C"]),
            ("C0", "D1", &["C", "D"]),
            ("C0", "B1", &["C", "D", "B"]),
            ("D0", "D1", &["D"]),
            ("D0", "B1", &["D", "B"]),
            ("D0", "A1", &["D", "B", "A"]),
            ("B0", "B1", &["B"]),
            ("B0", "A1", &["B", "A"]),
            ("B0", "C1", &["B", "A", "C"]),
        ];
        let routes = table
            .iter()
            .map(|(a, d, via)| RouteEntry {
                arrival: ZoneName::from(*a),
                departure: ZoneName::from(*d),
                via: via.iter().map(|s| ZoneName::from(*s)).collect(),
            })
            .collect();
        Geometry { zones, routes }
    }

    pub fn zone(&self, name: &ZoneName) -> Option<&Zone> {
        self.zones.iter().find(|z| &z.name == name)
    }

    pub fn center(&self, name: &ZoneName) -> Option<Point> {
        self.zone(name).map(|z| z.footprint.center())
    }

    pub fn is_critical(&self, name: &ZoneName) -> bool {
        self.zone(name).map(|z| z.kind == ZoneKind::Critical).unwrap_or(false)
    }

    pub fn critical_names(&self) -> BTreeSet<ZoneName> {
        self.zones
            .iter()
            .filter(|z| z.kind == ZoneKind::Critical)
            .map(|z| z.name.clone())
            .collect()
    }

    /// The zone containing `p`; on shared boundaries the lexicographically
    /// smallest name wins.
    pub fn zone_of(&self, p: Point) -> Option<&Zone> {
        self.zones
            .iter()
            .filter(|z| z.footprint.contains(p))
            .min_by(|a, b| a.name.cmp(&b.name))
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for z in &self.zones {
            if !seen.insert(&z.name) {
                return Err(format!("geometry.zones: duplicate zone {}", z.name));
            }
            let r = z.footprint;
            if !(r.area() > 0.0) || ![r.min_x, r.min_y, r.max_x, r.max_y].iter().all(|v| v.is_finite()) {
                return Err(format!("geometry.zones: zone {} has no positive area", z.name));
            }
        }
        let crit: Vec<&Zone> = self.zones.iter().filter(|z| z.kind == ZoneKind::Critical).collect();
        for (i, a) in crit.iter().enumerate() {
            for b in &crit[i + 1..] {
                if a.footprint.overlaps(&b.footprint) {
                    return Err(format!("geometry.zones: critical zones {} and {} overlap", a.name, b.name));
                }
            }
        }
        for r in &self.routes {
            let kind = |n: &ZoneName| self.zone(n).map(|z| z.kind);
            if kind(&r.arrival) != Some(ZoneKind::Arrival) {
                return Err(format!("geometry.routes: {} is not an arrival zone", r.arrival));
            }
            if kind(&r.departure) != Some(ZoneKind::Departure) {
                return Err(format!("geometry.routes: {} is not a departure zone", r.departure));
            }
            if r.via.is_empty() || r.via.len() > 3 {
                return Err(format!(
                    "geometry.routes: {}→{} must cross 1 to 3 critical zones",
                    r.arrival, r.departure
                ));
            }
            for v in &r.via {
                if kind(v) != Some(ZoneKind::Critical) {
                    return Err(format!("geometry.routes: {v} is not a critical zone"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Kinematics {
    pub v_max: f64,
    pub robot_radius: f64,
    pub eps: f64,
    pub tick_period_ms: u64,
    pub stall_timeout_ms: u64,
}

fn default_stall_timeout() -> u64 {
    30_000
}

impl Default for Kinematics {
    fn default() -> Self {
        Kinematics {
            v_max: 0.3,
            robot_radius: 0.15,
            eps: 0.08,
            tick_period_ms: 50,
            stall_timeout_ms: default_stall_timeout(),
        }
    }
}

impl Kinematics {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(format!("kinematics.v_max must be > 0, got {}", self.v_max));
        }
        if !(self.robot_radius > 0.0 && self.robot_radius.is_finite()) {
            return Err(format!("kinematics.robot_radius must be > 0, got {}", self.robot_radius));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(format!("kinematics.eps must be >= 0, got {}", self.eps));
        }
        if self.tick_period_ms == 0 {
            return Err("kinematics.tick_period_ms must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFlag {
    InMotion,
    Done,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    pub target: Option<Point>,
    pub avoid: Option<Region>,
    pub flag: MotionFlag,
    waypoints: Vec<Point>,
    stalled_since: Option<SimTime>,
}

impl Default for MotionState {
    fn default() -> Self {
        MotionState {
            target: None,
            avoid: None,
            flag: MotionFlag::Done,
            waypoints: Vec::new(),
            stalled_since: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Body {
    pub pose: Pose,
    pub motion: MotionState,
    pub last_update: SimTime,
    pub frozen: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MotionError {
    #[error("no body for {0}")]
    UnknownPid(Pid),
    #[error("target lies inside the avoid region")]
    TargetInsideAvoid,
}

/// Waypoints from `start` to `target` keeping at least `clearance` from the
/// center of `avoid` (a disc); `None` when a single tangent detour cannot do it.
pub fn plan_path(start: Point, target: Point, avoid: Option<Region>, clearance: f64) -> Option<Vec<Point>> {
    let (c, r) = match avoid {
        None | Some(Region::Everywhere) => return Some(vec![target]),
        Some(Region::Disc { center, radius }) => (center, radius + clearance),
    };
    if start.dist(c) < r || target.dist(c) < r {
        return None;
    }
    if segment_distance(start, target, c) >= r {
        return Some(vec![target]);
    }
    // plan around a slightly larger circle so tangency keeps a numerical margin
    let rr = r * (1.0 + 1e-6) + 1e-9;
    if start.dist(c) <= rr || target.dist(c) <= rr {
        return None;
    }
    let st = (target.x - start.x, target.y - start.y);
    let sc = (c.x - start.x, c.y - start.y);
    let cross = st.0 * sc.1 - st.1 * sc.0;
    // obstacle on the left → pass on the right (clockwise from start)
    let sigma = if cross > 0.0 { -1.0 } else { 1.0 };
    let rot = |v: (f64, f64), a: f64| {
        let (s, co) = (libm::sin(a), libm::cos(a));
        (v.0 * co - v.1 * s, v.0 * s + v.1 * co)
    };
    let unit = |v: (f64, f64)| {
        let n = (v.0 * v.0 + v.1 * v.1).sqrt();
        (v.0 / n, v.1 / n)
    };
    let a_s = libm::asin(rr / start.dist(c));
    let a_t = libm::asin(rr / target.dist(c));
    let ds = rot(unit(sc), sigma * a_s);
    let dt = rot(unit((c.x - target.x, c.y - target.y)), -sigma * a_t);
    let denom = ds.0 * dt.1 - ds.1 * dt.0;
    if denom.abs() < 1e-12 {
        return None;
    }
    let tsx = (target.x - start.x, target.y - start.y);
    let a = (tsx.0 * dt.1 - tsx.1 * dt.0) / denom;
    let b = (tsx.0 * ds.1 - tsx.1 * ds.0) / denom;
    if a <= 0.0 || b <= 0.0 {
        return None;
    }
    let w = Point::new(start.x + a * ds.0, start.y + a * ds.1);
    Some(vec![w, target])
}

/// Distance from `p` to the segment `a`–`b`.
pub fn segment_distance(a: Point, b: Point, p: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return a.dist(p);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    Point::new(a.x + t * dx, a.y + t * dy).dist(p)
}

#[derive(Debug, Clone)]
pub struct Physics {
    pub kin: Kinematics,
    bodies: BTreeMap<Pid, Body>,
}

impl Physics {
    pub fn new(kin: Kinematics) -> Self {
        Physics {
            kin,
            bodies: BTreeMap::new(),
        }
    }

    pub fn add_body(&mut self, pid: Pid, pose: Pose, now: SimTime) {
        self.bodies.insert(
            pid,
            Body {
                pose,
                motion: MotionState::default(),
                last_update: now,
                frozen: false,
            },
        );
    }

    /// Takes a robot out of the world (it has left the intersection).
    pub fn remove_body(&mut self, pid: Pid) -> Option<Body> {
        self.bodies.remove(&pid)
    }

    pub fn body(&self, pid: Pid) -> Option<&Body> {
        self.bodies.get(&pid)
    }

    pub fn bodies(&self) -> impl Iterator<Item = (Pid, &Body)> {
        self.bodies.iter().map(|(p, b)| (*p, b))
    }

    pub fn position(&self, pid: Pid) -> Option<Point> {
        self.bodies.get(&pid).map(|b| b.pose.point())
    }

    pub fn any_in_motion(&self) -> bool {
        self.bodies
            .values()
            .any(|b| !b.frozen && b.motion.flag == MotionFlag::InMotion)
    }

    pub fn do_move(
        &mut self,
        pid: Pid,
        target: Point,
        avoid: Option<Region>,
        now: SimTime,
    ) -> Result<(), MotionError> {
        let clearance = self.kin.robot_radius;
        let body = self.bodies.get_mut(&pid).ok_or(MotionError::UnknownPid(pid))?;
        body.motion.target = Some(target);
        body.motion.avoid = avoid;
        body.motion.stalled_since = None;
        body.last_update = now;
        if avoid.map(|a| a.contains(target)).unwrap_or(false) {
            body.motion.flag = MotionFlag::Fail;
            body.motion.waypoints.clear();
            return Err(MotionError::TargetInsideAvoid);
        }
        body.motion.waypoints = plan_path(body.pose.point(), target, avoid, clearance).unwrap_or_default();
        body.motion.flag = MotionFlag::InMotion;
        Ok(())
    }

    /// Halts a robot where it stands.
    pub fn stop(&mut self, pid: Pid) {
        if let Some(b) = self.bodies.get_mut(&pid) {
            b.motion.waypoints.clear();
            b.motion.target = None;
            b.motion.avoid = None;
            if b.motion.flag == MotionFlag::InMotion {
                b.motion.flag = MotionFlag::Done;
            }
        }
    }

    /// Freezes a crashed robot: it keeps its pose and stays an obstacle.
    pub fn freeze(&mut self, pid: Pid) {
        if let Some(b) = self.bodies.get_mut(&pid) {
            b.frozen = true;
        }
    }

    /// Advances one robot by `dt` milliseconds. Returns true when its pose or
    /// flag changed.
    pub fn step_motion(&mut self, pid: Pid, dt: u64, now: SimTime) -> bool {
        let kin = self.kin.clone();
        let Some(body) = self.bodies.get_mut(&pid) else {
            return false;
        };
        body.last_update = now;
        if body.frozen || body.motion.flag != MotionFlag::InMotion {
            return false;
        }
        let Some(target) = body.motion.target else {
            body.motion.flag = MotionFlag::Done;
            return true;
        };
        let start = body.pose.point();
        if body.motion.waypoints.is_empty() && start.dist(target) > kin.eps {
            // no admissible path: stall until the timeout
            let since = *body.motion.stalled_since.get_or_insert(now);
            if now.saturating_sub(since) >= kin.stall_timeout_ms {
                body.motion.flag = MotionFlag::Fail;
                return true;
            }
            return false;
        }
        let mut budget = kin.v_max * dt as f64 / 1000.0;
        let mut pos = start;
        while budget > 0.0 {
            let Some(&w) = body.motion.waypoints.first() else {
                break;
            };
            let d = pos.dist(w);
            if d <= budget {
                pos = w;
                budget -= d;
                body.motion.waypoints.remove(0);
            } else {
                let f = budget / d;
                pos = Point::new(pos.x + (w.x - pos.x) * f, pos.y + (w.y - pos.y) * f);
                budget = 0.0;
            }
        }
        let moved = pos != start;
        if moved {
            body.pose = Pose::new(pos.x, pos.y, heading_towards(start, pos));
        }
        if body.motion.waypoints.is_empty() && pos.dist(target) <= kin.eps {
            body.motion.flag = MotionFlag::Done;
            return true;
        }
        moved
    }

    /// All unordered pairs closer than two robot radii.
    pub fn detect_collisions(&self) -> Vec<(Pid, Pid)> {
        let limit = 2.0 * self.kin.robot_radius;
        let v: Vec<(Pid, Point)> = self.bodies.iter().map(|(p, b)| (*p, b.pose.point())).collect();
        let mut out = Vec::new();
        for (i, (a, pa)) in v.iter().enumerate() {
            for (b, pb) in &v[i + 1..] {
                if pa.dist(*pb) < limit {
                    out.push((*a, *b));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kin(v: f64) -> Kinematics {
        Kinematics {
            v_max: v,
            ..Kinematics::default()
        }
    }

    fn run_to_completion(ph: &mut Physics, pid: Pid, from: SimTime) -> (SimTime, Vec<Point>) {
        let mut t = from;
        let mut trail = vec![ph.position(pid).unwrap()];
        for _ in 0..100_000 {
            if ph.body(pid).unwrap().motion.flag != MotionFlag::InMotion {
                break;
            }
            t = t + ph.kin.tick_period_ms;
            ph.step_motion(pid, ph.kin.tick_period_ms, t);
            trail.push(ph.position(pid).unwrap());
        }
        (t, trail)
    }

    #[test]
    fn heading_normalization() {
        assert_eq!(normalize_heading(-PI), PI);
        assert!((normalize_heading(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_heading(-PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zone_of_center_outside_and_tie_break() {
        let g = Geometry::fourway();
        assert_eq!(g.zone_of(Point::new(-0.5, -0.5)).unwrap().name.as_str(), "A");
        assert!(g.zone_of(Point::new(5.0, 5.0)).is_none());
        // shared edge of A (south-west) and C (north-west)
        assert_eq!(g.zone_of(Point::new(-0.5, 0.0)).unwrap().name.as_str(), "A");
    }

    #[test]
    fn default_geometry_is_valid() {
        Geometry::fourway().validate().unwrap();
    }

    #[test]
    fn overlapping_critical_zones_rejected() {
        let mut g = Geometry::fourway();
        g.zones[1].footprint = Rect::new(-0.5, -1.0, 1.0, 0.0);
        assert!(g.validate().unwrap_err().contains("overlap"));
    }

    #[test]
    fn zero_distance_move_is_done_next_tick() {
        let mut ph = Physics::new(Kinematics::default());
        ph.add_body(Pid(0), Pose::new(1.0, 1.0, 0.0), SimTime(0));
        ph.do_move(Pid(0), Point::new(1.0, 1.0), None, SimTime(0)).unwrap();
        assert_eq!(ph.body(Pid(0)).unwrap().motion.flag, MotionFlag::InMotion);
        ph.step_motion(Pid(0), 50, SimTime(50));
        assert_eq!(ph.body(Pid(0)).unwrap().motion.flag, MotionFlag::Done);
    }

    #[test]
    fn target_inside_avoid_fails_without_moving() {
        let mut ph = Physics::new(Kinematics::default());
        ph.add_body(Pid(0), Pose::new(0.0, 0.0, 0.0), SimTime(0));
        let r = ph.do_move(Pid(0), Point::new(3.0, 0.0), Some(Region::disc(3.0, 0.0, 1.0)), SimTime(0));
        assert_eq!(r, Err(MotionError::TargetInsideAvoid));
        assert_eq!(ph.body(Pid(0)).unwrap().motion.flag, MotionFlag::Fail);
        ph.step_motion(Pid(0), 50, SimTime(50));
        assert_eq!(ph.position(Pid(0)).unwrap(), Point::new(0.0, 0.0));
    }

    #[test]
    fn two_meter_move_at_one_meter_per_second() {
        let mut ph = Physics::new(kin(1.0));
        ph.add_body(Pid(0), Pose::new(0.0, 0.0, 0.0), SimTime(0));
        ph.do_move(Pid(0), Point::new(2.0, 0.0), None, SimTime(0)).unwrap();
        let (t, _) = run_to_completion(&mut ph, Pid(0), SimTime(0));
        // closed form: 2 m / 1 m/s, reached once within eps of the target
        let exact = 2000.0 - ph.kin.eps / 1.0 * 1000.0;
        assert!((t.ms() as f64 - exact).abs() <= ph.kin.tick_period_ms as f64 + 80.0, "done at {t}");
        assert!((t.ms() as i64 - 2000).abs() <= 50);
        assert_eq!(ph.body(Pid(0)).unwrap().motion.flag, MotionFlag::Done);
    }

    #[test]
    fn straight_path_interpolates_linearly() {
        let mut ph = Physics::new(kin(0.5));
        ph.add_body(Pid(0), Pose::new(0.0, 0.0, 0.0), SimTime(0));
        ph.do_move(Pid(0), Point::new(0.0, 3.0), None, SimTime(0)).unwrap();
        ph.step_motion(Pid(0), 1000, SimTime(1000));
        let p = ph.position(Pid(0)).unwrap();
        assert!((p.y - 0.5).abs() < 1e-12 && p.x.abs() < 1e-12);
        assert!((ph.body(Pid(0)).unwrap().pose.heading - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn dt_zero_leaves_pose_unchanged() {
        let mut ph = Physics::new(Kinematics::default());
        ph.add_body(Pid(0), Pose::new(0.0, 0.0, 0.0), SimTime(0));
        ph.do_move(Pid(0), Point::new(1.0, 0.0), None, SimTime(0)).unwrap();
        ph.step_motion(Pid(0), 0, SimTime(0));
        assert_eq!(ph.position(Pid(0)).unwrap(), Point::new(0.0, 0.0));
    }

    #[test]
    fn detour_around_blocking_disc_keeps_clearance() {
        let mut ph = Physics::new(kin(0.5));
        let avoid = Region::disc(0.0, 0.1, 0.5);
        ph.add_body(Pid(0), Pose::new(-3.0, 0.0, 0.0), SimTime(0));
        ph.do_move(Pid(0), Point::new(3.0, 0.0), Some(avoid), SimTime(0)).unwrap();
        let (_, trail) = run_to_completion(&mut ph, Pid(0), SimTime(0));
        assert_eq!(ph.body(Pid(0)).unwrap().motion.flag, MotionFlag::Done);
        // oracle: sample every segment of the trail densely
        let r = ph.kin.robot_radius;
        let c = Point::new(0.0, 0.1);
        for w in trail.windows(2) {
            for k in 0..=50 {
                let f = k as f64 / 50.0;
                let p = Point::new(w[0].x + (w[1].x - w[0].x) * f, w[0].y + (w[1].y - w[0].y) * f);
                assert!(!avoid.contains(p));
                assert!(c.dist(p) - 0.5 >= r - 1e-9, "too close at {p:?}");
            }
        }
    }

    #[test]
    fn unreachable_target_stalls_then_fails() {
        let mut k = Kinematics::default();
        k.stall_timeout_ms = 1000;
        let mut ph = Physics::new(k);
        ph.add_body(Pid(0), Pose::new(0.0, 0.0, 0.0), SimTime(0));
        // target outside the disc but inside its clearance band
        ph.do_move(Pid(0), Point::new(1.1, 0.0), Some(Region::disc(2.0, 0.0, 0.85)), SimTime(0))
            .unwrap();
        let (t, _) = run_to_completion(&mut ph, Pid(0), SimTime(0));
        assert_eq!(ph.body(Pid(0)).unwrap().motion.flag, MotionFlag::Fail);
        assert!(t.ms() >= 1000);
        assert_eq!(ph.position(Pid(0)).unwrap(), Point::new(0.0, 0.0));
    }

    #[test]
    fn collision_pairs() {
        let mut ph = Physics::new(Kinematics::default());
        let r = ph.kin.robot_radius;
        ph.add_body(Pid(0), Pose::new(0.0, 0.0, 0.0), SimTime(0));
        ph.add_body(Pid(1), Pose::new(3.0 * r, 0.0, 0.0), SimTime(0));
        assert!(ph.detect_collisions().is_empty());
        ph.add_body(Pid(2), Pose::new(0.0, 0.0, 0.0), SimTime(0));
        assert_eq!(ph.detect_collisions(), vec![(Pid(0), Pid(2))]);
        let mut ph = Physics::new(Kinematics::default());
        for i in 0..3 {
            ph.add_body(Pid(i), Pose::new(0.01 * i as f64, 0.0, 0.0), SimTime(0));
        }
        assert_eq!(ph.detect_collisions().len(), 3);
    }

    proptest! {
        #[test]
        fn displacement_never_exceeds_speed_bound(
            tx in -5.0f64..5.0, ty in -5.0f64..5.0,
            v in 0.05f64..2.0,
            dts in proptest::collection::vec(0u64..400, 1..40),
        ) {
            let mut ph = Physics::new(kin(v));
            ph.add_body(Pid(0), Pose::new(0.0, 0.0, 0.0), SimTime(0));
            ph.do_move(Pid(0), Point::new(tx, ty), None, SimTime(0)).unwrap();
            let mut t = SimTime(0);
            for dt in dts {
                let before = ph.position(Pid(0)).unwrap();
                t = t + dt;
                ph.step_motion(Pid(0), dt, t);
                let after = ph.position(Pid(0)).unwrap();
                prop_assert!(before.dist(after) <= v * dt as f64 / 1000.0 + 1e-12);
                let b = ph.body(Pid(0)).unwrap();
                if b.motion.flag == MotionFlag::Done {
                    prop_assert!(after.dist(Point::new(tx, ty)) <= ph.kin.eps);
                }
            }
        }

        #[test]
        fn detour_never_enters_clearance_band(
            cx in -1.0f64..1.0, cy in -1.0f64..1.0, rad in 0.1f64..0.8,
        ) {
            let start = Point::new(-4.0, 0.0);
            let target = Point::new(4.0, 0.3);
            let clearance = 0.15;
            if let Some(path) = plan_path(start, target, Some(Region::disc(cx, cy, rad)), clearance) {
                let mut prev = start;
                for w in path {
                    prop_assert!(segment_distance(prev, w, Point::new(cx, cy)) >= rad + clearance - 1e-9);
                    prev = w;
                }
            }
        }

        #[test]
        fn zone_of_is_a_function(x in -3.5f64..3.5, y in -3.5f64..3.5) {
            let g = Geometry::fourway();
            let hits: Vec<&Zone> = g.zones.iter().filter(|z| z.footprint.contains(Point::new(x, y))).collect();
            match g.zone_of(Point::new(x, y)) {
                None => prop_assert!(hits.is_empty()),
                Some(z) => prop_assert!(hits.iter().all(|h| z.name <= h.name)),
            }
        }
    }
}
