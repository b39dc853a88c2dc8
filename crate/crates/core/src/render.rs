//! SVG snapshots of a trace at a chosen instant.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use thiserror::Error;

use crate::physics::ZoneKind;
use crate::trace::{RecordBody, Trace};
use crate::types::{Pid, Point, SimTime, ZoneName};

const SCALE: f64 = 80.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("time {at} is outside the trace (ends at {end})")]
    TimeOutOfRange { at: SimTime, end: SimTime },
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default)]
struct RobotView {
    pos: Option<Point>,
    loc: String,
    myseq: Vec<ZoneName>,
}

/// Draws zones, robots and held zones as they were at time `at`.
pub fn render_snapshot(trace: &Trace, at: SimTime) -> Result<String, RenderError> {
    let end = trace.end_time();
    if at > end {
        return Err(RenderError::TimeOutOfRange { at, end });
    }
    let mut robots: BTreeMap<Pid, RobotView> = BTreeMap::new();
    for r in trace.records.iter().take_while(|r| r.time <= at) {
        let Some(pid) = r.pid() else { continue };
        let v = robots.entry(pid).or_default();
        match &r.body {
            RecordBody::Spawn { x, y, route, .. } => {
                v.pos = Some(Point::new(*x, *y));
                v.myseq = route.clone();
            }
            RecordBody::MotionTick { x, y, .. } => v.pos = Some(Point::new(*x, *y)),
            RecordBody::Done => v.pos = None,
            RecordBody::AppLoc { to, myseq, .. } => {
                v.loc = to.clone();
                v.myseq = myseq.clone();
            }
            _ => {}
        }
    }

    let geom = &trace.header.scenario.geometry;
    let (mut lo, mut hi) = (Point::new(f64::MAX, f64::MAX), Point::new(f64::MIN, f64::MIN));
    for z in &geom.zones {
        lo.x = lo.x.min(z.footprint.min_x);
        lo.y = lo.y.min(z.footprint.min_y);
        hi.x = hi.x.max(z.footprint.max_x);
        hi.y = hi.y.max(z.footprint.max_y);
    }
    if geom.zones.is_empty() {
        (lo, hi) = (Point::new(-4.0, -4.0), Point::new(4.0, 4.0));
    }
    let pad = 0.5;
    let w = (hi.x - lo.x + 2.0 * pad) * SCALE;
    let h = (hi.y - lo.y + 2.0 * pad) * SCALE;
    // y grows downward in SVG
    let sx = |x: f64| (x - lo.x + pad) * SCALE;
    let sy = |y: f64| (hi.y - y + pad) * SCALE;

    let held = held_zones(trace, at);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for z in &geom.zones {
        let f = &z.footprint;
        let fill = match (z.kind, held.get(&z.name)) {
            (ZoneKind::Critical, Some(_)) => "#f4b183",
            (ZoneKind::Critical, None) => "#d9d9d9",
            _ => "#eef3f8",
        };
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{fill}" stroke="#555" stroke-width="1"/>"##,
            sx(f.min_x),
            sy(f.max_y),
            (f.max_x - f.min_x) * SCALE,
            (f.max_y - f.min_y) * SCALE
        );
        let c = f.center();
        let label = match held.get(&z.name) {
            Some(p) => format!("{} ({p})", z.name),
            None => z.name.to_string(),
        };
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" fill="#333">{label}</text>"##,
            sx(c.x),
            sy(c.y) - 12.0
        );
    }
    let radius = trace.header.scenario.kinematics.robot_radius * SCALE;
    for v in robots.values() {
        let Some(p) = v.pos else { continue };
        let mut pts = vec![p];
        // myseq[0] is the zone being left
        pts.extend(v.myseq.iter().skip(1).filter_map(|z| geom.center(z)));
        if pts.len() < 2 {
            continue;
        }
        let coords: Vec<String> = pts.iter().map(|q| format!("{:.1},{:.1}", sx(q.x), sy(q.y))).collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#2e75b6" stroke-width="1.5" stroke-dasharray="4 4"/>"##,
            coords.join(" ")
        );
    }
    for (pid, v) in &robots {
        let Some(p) = v.pos else { continue };
        let _ = writeln!(
            out,
            r##"<circle cx="{:.1}" cy="{:.1}" r="{radius:.1}" fill="#2e75b6" stroke="black"/>"##,
            sx(p.x),
            sy(p.y)
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle" fill="white">{}</text>"##,
            sx(p.x),
            sy(p.y) + 3.0,
            pid.0
        );
        if !v.loc.is_empty() {
            let _ = writeln!(
                out,
                r##"<text x="{:.1}" y="{:.1}" font-size="9" fill="#2e75b6">{}</text>"##,
                sx(p.x) + radius + 2.0,
                sy(p.y),
                v.loc
            );
        }
    }
    let _ = writeln!(
        out,
        r##"<text x="6" y="14" font-size="12" fill="#000">t = {at}</text>"##
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Renders the snapshot at `at` and writes it to `path`.
pub fn write_snapshot(trace: &Trace, at: SimTime, path: &Path) -> Result<(), SnapshotError> {
    let svg = render_snapshot(trace, at)?;
    std::fs::write(path, svg).map_err(|source| SnapshotError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Zones shaded at `at`: the union of every robot's crit_set.
pub fn held_zones(trace: &Trace, at: SimTime) -> BTreeMap<ZoneName, Pid> {
    let mut sets: BTreeMap<Pid, Vec<ZoneName>> = BTreeMap::new();
    for r in trace.records.iter().take_while(|r| r.time <= at) {
        if let (RecordBody::GvhPublish { key, value, .. }, Some(pid)) = (&r.body, r.pid()) {
            if key.instance == "mux" && key.field == "crit_set" {
                sets.insert(pid, value.as_zones().map(|z| z.to_vec()).unwrap_or_default());
            }
        }
    }
    sets.into_iter().flat_map(|(p, zs)| zs.into_iter().map(move |z| (z, p))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_bundled;
    use crate::world::{run_scenario, RunOptions};

    fn fourway() -> Trace {
        run_scenario(&load_bundled("fourway").unwrap(), RunOptions::default()).unwrap().trace
    }

    #[test]
    fn start_shows_four_robots_in_arrival_lanes() {
        let t = fourway();
        let svg = render_snapshot(&t, SimTime::ZERO).unwrap();
        assert_eq!(svg.matches("<circle").count(), 4);
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn shading_follows_published_crit_sets() {
        let t = fourway();
        let grant = t
            .records
            .iter()
            .find(|r| matches!(&r.body, RecordBody::GvhPublish { key, .. } if key.field == "crit_set"))
            .unwrap();
        let held = held_zones(&t, grant.time);
        assert!(!held.is_empty());
        let svg = render_snapshot(&t, grant.time).unwrap();
        assert_eq!(svg.matches("#f4b183").count(), held.len());
    }

    #[test]
    fn past_the_end_is_rejected() {
        let t = fourway();
        let end = t.end_time();
        assert_eq!(
            render_snapshot(&t, end + 1),
            Err(RenderError::TimeOutOfRange { at: end + 1, end })
        );
    }
}
