//! Scenario files: everything needed to reproduce a run.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::icp::path;
use crate::net::{NetConfig, Region};
use crate::physics::{Geometry, Kinematics};
use crate::primitives::timing::{TimingConfig, TimingParams};
use crate::primitives::{ElectionAlgorithm, MutexFault};
use crate::types::{Pid, SimTime, ZoneName};

const BUNDLED: [(&str, &str); 5] = [
    ("fourway", include_str!("../scenarios/fourway.json")),
    ("solo", include_str!("../scenarios/solo.json")),
    ("contention", include_str!("../scenarios/contention.json")),
    ("lossy", include_str!("../scenarios/lossy.json")),
    ("crash", include_str!("../scenarios/crash.json")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {msg}")]
    Validation { field: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub pid: Pid,
    pub arrival: ZoneName,
    pub departure: ZoneName,
    #[serde(default)]
    pub start_at: SimTime,
}

/// Non-vehicle workloads used by experiments and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorSpec {
    /// Receives messages, does nothing else.
    Idle,
    /// Repeatedly requests random zone subsets from a fixed group.
    Stress {
        zones: Vec<ZoneName>,
        requests: u32,
        max_zones: usize,
        hold_ms: u64,
        think_ms: u64,
    },
    /// Geocasts `count` beacons, one every `period_ms`.
    GeocastProbe {
        region: Region,
        count: u32,
        period_ms: u64,
    },
    /// Registers on start and optionally unregisters later.
    Register {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        leave_at: Option<SimTime>,
    },
    /// Runs one election among all election agents.
    Election,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub pid: Pid,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub start_at: SimTime,
    pub behavior: BehaviorSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    #[serde(default)]
    pub halt_on_violation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    #[serde(default)]
    pub mutex: MutexFault,
}

fn default_step() -> u64 {
    crate::engine::DEFAULT_STEP_PERIOD_MS
}

fn default_region() -> Region {
    Region::disc(0.0, 0.0, 4.0)
}

fn default_max_time() -> u64 {
    600_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_step")]
    pub step_period_ms: u64,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub kinematics: Kinematics,
    /// Intersection (registration group) id.
    #[serde(default)]
    pub xid: u32,
    #[serde(default = "default_region")]
    pub registration_region: Region,
    #[serde(default)]
    pub election: ElectionAlgorithm,
    #[serde(default)]
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub faults: FaultConfig,
    #[serde(default = "default_max_time")]
    pub max_time_ms: u64,
}

impl Scenario {
    pub fn empty(name: &str) -> Self {
        Scenario::from_json_str(&format!("{{\"name\": {name:?}}}")).expect("minimal scenario")
    }

    pub fn timing(&self) -> TimingParams {
        self.timing.resolve(self.net.mean_delay)
    }

    pub fn from_json_str(s: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = serde_json::from_str(s).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Reads a scenario file. A bare bundled name (`fourway`, `solo.json`,
    /// ...) that is not an existing path loads the bundled copy.
    pub fn load(p: &Path) -> Result<Scenario, ScenarioError> {
        Self::load_with(p, &[])
    }

    /// Like [`Scenario::load`] with `key=value` overrides applied before
    /// validation.
    pub fn load_with(p: &Path, overrides: &[String]) -> Result<Scenario, ScenarioError> {
        let text = if p.exists() {
            std::fs::read_to_string(p).map_err(|e| ScenarioError::Io {
                path: p.display().to_string(),
                source: e,
            })?
        } else {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            match bundled(stem) {
                Some(s) if p.parent().map(|d| d.as_os_str().is_empty()).unwrap_or(true) => s.to_string(),
                _ => {
                    return Err(ScenarioError::Io {
                        path: p.display().to_string(),
                        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                    })
                }
            }
        };
        Self::from_json_with(&text, overrides)
    }

    pub fn from_json_with(text: &str, overrides: &[String]) -> Result<Scenario, ScenarioError> {
        let mut v: serde_json::Value = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let sc: Scenario = serde_json::from_value(v).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.step_period_ms == 0 {
            return Err(invalid("step_period_ms", "must be > 0"));
        }
        self.net.validate().map_err(|m| invalid("net", m))?;
        self.timing().validate().map_err(|m| invalid("timing", m))?;
        self.kinematics.validate().map_err(|m| invalid("kinematics", m))?;
        self.geometry.validate().map_err(|m| invalid("geometry", m))?;
        if !self.registration_region.is_valid() {
            return Err(invalid("registration_region", "disc radius must be > 0"));
        }
        let mut pids = BTreeSet::new();
        for (i, v) in self.vehicles.iter().enumerate() {
            if !pids.insert(v.pid) {
                return Err(invalid(format!("vehicles[{i}].pid"), format!("duplicate pid {}", v.pid.0)));
            }
            path(&self.geometry, &v.arrival, &v.departure)
                .map_err(|e| invalid(format!("vehicles[{i}]"), e.to_string()))?;
        }
        for (i, a) in self.agents.iter().enumerate() {
            if !pids.insert(a.pid) {
                return Err(invalid(format!("agents[{i}].pid"), format!("duplicate pid {}", a.pid.0)));
            }
            if !(a.x.is_finite() && a.y.is_finite()) {
                return Err(invalid(format!("agents[{i}]"), "position must be finite"));
            }
            match &a.behavior {
                BehaviorSpec::Stress { zones, max_zones, .. } => {
                    if zones.is_empty() || *max_zones == 0 {
                        return Err(invalid(format!("agents[{i}].behavior"), "needs at least one zone"));
                    }
                }
                BehaviorSpec::GeocastProbe { region, period_ms, .. } => {
                    if !region.is_valid() || *period_ms == 0 {
                        return Err(invalid(format!("agents[{i}].behavior"), "bad region or period"));
                    }
                }
                _ => {}
            }
        }
        for (i, c) in self.net.crash_schedule.iter().enumerate() {
            if !pids.contains(&c.pid) {
                return Err(invalid(format!("net.crash_schedule[{i}]"), format!("unknown pid {}", c.pid.0)));
            }
        }
        Ok(())
    }
}

/// Sets `key` (a dotted path, numeric segments index arrays) to `value`,
/// parsed as JSON when possible and as a string otherwise.
pub fn apply_override(root: &mut serde_json::Value, kv: &str) -> Result<(), ScenarioError> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| invalid("--set", format!("expected KEY=VALUE, got {kv:?}")))?;
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()))
            }
            serde_json::Value::Array(arr) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| invalid(key, format!("{part:?} is not an array index")))?;
                let slot = arr
                    .get_mut(idx)
                    .ok_or_else(|| invalid(key, format!("index {idx} out of range")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(invalid(key, format!("{part:?} is not inside an object"))),
        };
    }
    Ok(())
}

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn load_bundled(name: &str) -> Result<Scenario, ScenarioError> {
    let text = bundled(name).ok_or_else(|| invalid("scenario", format!("no bundled scenario {name:?}")))?;
    Scenario::from_json_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_scenarios_load() {
        for n in bundled_names() {
            load_bundled(n).unwrap_or_else(|e| panic!("{n}: {e}"));
        }
    }

    #[test]
    fn fourway_has_the_four_robots() {
        let sc = load_bundled("fourway").unwrap();
        assert_eq!(sc.vehicles.len(), 4);
        assert_eq!(sc.net.mean_delay, 100);
        let arrivals: BTreeSet<&str> = sc.vehicles.iter().map(|v| v.arrival.as_str()).collect();
        assert_eq!(arrivals, ["A0", "B0", "C0", "D0"].into_iter().collect());
    }

    #[test]
    fn round_trip() {
        for n in bundled_names() {
            let sc = load_bundled(n).unwrap();
            assert_eq!(Scenario::from_json_str(&sc.to_json_pretty()).unwrap(), sc);
        }
    }

    #[test]
    fn u_turn_rejected_with_field() {
        let text = bundled("solo").unwrap();
        let err = Scenario::from_json_with(text, &["vehicles.0.departure=\"B1\"".into()]).unwrap_err();
        match err {
            ScenarioError::Validation { field, .. } => assert_eq!(field, "vehicles[0]"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_loss_rate_rejected() {
        let err = Scenario::from_json_with(bundled("fourway").unwrap(), &["net.loss_rate=1.5".into()]).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref field, .. } if field == "net"), "{err}");
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let sc = Scenario::from_json_with(
            bundled("fourway").unwrap(),
            &["net.loss_rate=0.2".into(), "kinematics.v_max=0.5".into(), "name=renamed".into()],
        )
        .unwrap();
        assert_eq!(sc.net.loss_rate, 0.2);
        assert_eq!(sc.kinematics.v_max, 0.5);
        assert_eq!(sc.name, "renamed");
    }

    #[test]
    fn malformed_input_is_parse_error() {
        assert!(matches!(Scenario::from_json_str("{"), Err(ScenarioError::Parse(_))));
        assert!(matches!(
            Scenario::from_json_str("{\"name\":\"x\",\"bogus\":1}"),
            Err(ScenarioError::Parse(_))
        ));
    }
}
