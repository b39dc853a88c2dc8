//! Intersection Coordination Protocol: the per-vehicle application.
//!
//! A vehicle registers, asks the mutex for every critical zone on its route
//! at once, then drives zone center to zone center, giving back each critical
//! zone once it has entered the next one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{Geometry, MotionFlag, ZoneKind};
use crate::types::{Pid, ZoneName, ZoneSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loc {
    S0,
    RegWait,
    MutexWait,
    MoveWait,
    S1,
    Done,
    /// A primitive reported failure; the vehicle is parked for good.
    Stuck,
}

impl Loc {
    pub fn label(self) -> &'static str {
        match self {
            Loc::S0 => "S0",
            Loc::RegWait => "reg_wait",
            Loc::MutexWait => "mutex_wait",
            Loc::MoveWait => "move_wait",
            Loc::S1 => "S1",
            Loc::Done => "done",
            Loc::Stuck => "stuck",
        }
    }

    pub fn from_label(s: &str) -> Option<Loc> {
        [
            Loc::S0,
            Loc::RegWait,
            Loc::MutexWait,
            Loc::MoveWait,
            Loc::S1,
            Loc::Done,
            Loc::Stuck,
        ]
        .into_iter()
        .find(|l| l.label() == s)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Loc::Done | Loc::Stuck)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IcpError {
    #[error("no route from {arrival} to {departure}")]
    IllegalPair { arrival: ZoneName, departure: ZoneName },
    #[error("zone sequence needs at least two zones")]
    TooShort,
}

/// The full zone sequence from `arrival` to `departure`, both included.
pub fn path(geom: &Geometry, arrival: &ZoneName, departure: &ZoneName) -> Result<Vec<ZoneName>, IcpError> {
    geom.routes
        .iter()
        .find(|r| &r.arrival == arrival && &r.departure == departure)
        .map(|r| {
            let mut v = Vec::with_capacity(r.via.len() + 2);
            v.push(r.arrival.clone());
            v.extend(r.via.iter().cloned());
            v.push(r.departure.clone());
            v
        })
        .ok_or_else(|| IcpError::IllegalPair {
            arrival: arrival.clone(),
            departure: departure.clone(),
        })
}

/// `seq` without its first and last element.
pub fn mid(seq: &[ZoneName]) -> Result<Vec<ZoneName>, IcpError> {
    if seq.len() < 2 {
        return Err(IcpError::TooShort);
    }
    Ok(seq[1..seq.len() - 1].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpState {
    pub pid: Pid,
    pub xid: u32,
    pub loc: Loc,
    pub myseq: Vec<ZoneName>,
    pub route: Vec<ZoneName>,
    pub plist: Vec<Pid>,
    pub pre_destination: Option<ZoneName>,
}

impl IcpState {
    pub fn new(pid: Pid, xid: u32, route: Vec<ZoneName>) -> Self {
        IcpState {
            pid,
            xid,
            loc: Loc::S0,
            myseq: route.clone(),
            route,
            plist: Vec::new(),
            pre_destination: None,
        }
    }
}

/// What the vehicle reads from its gvh and its own body at a step.
#[derive(Debug, Clone, Default)]
pub struct IcpView {
    pub rlist: Option<Vec<Pid>>,
    pub crit: bool,
    pub mux_failed: bool,
    pub crit_set: ZoneSet,
    pub motion: Option<MotionFlag>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Register,
    Mutex { zones: ZoneSet, plist: Vec<Pid> },
    MoveTo(ZoneName),
    Release(ZoneSet),
    Unregister,
    StopMotion,
    Stuck(String),
}

/// One application step. Mutates `st` and returns the effects to execute.
pub fn icp_step(st: &mut IcpState, view: &IcpView, geom: &Geometry) -> Vec<Effect> {
    let mut fx = Vec::new();
    match st.loc {
        Loc::S0 => {
            fx.push(Effect::Register);
            st.loc = Loc::RegWait;
        }
        Loc::RegWait => {
            if let Some(rl) = &view.rlist {
                st.plist = rl.clone();
                let zones: ZoneSet = mid(&st.myseq).unwrap_or_default().into_iter().collect();
                fx.push(Effect::Mutex {
                    zones,
                    plist: st.plist.clone(),
                });
                st.loc = Loc::MutexWait;
            }
        }
        Loc::MutexWait => {
            if view.mux_failed {
                fx.push(Effect::Stuck("mutex failed".into()));
                st.loc = Loc::Stuck;
            } else if view.crit && st.myseq.len() >= 2 {
                fx.push(Effect::MoveTo(st.myseq[1].clone()));
                st.pre_destination = Some(st.myseq[0].clone());
                st.loc = Loc::MoveWait;
            }
        }
        Loc::MoveWait => match view.motion {
            Some(MotionFlag::Fail) => {
                fx.push(Effect::Stuck("motion failed".into()));
                st.loc = Loc::Stuck;
            }
            Some(MotionFlag::Done) => {
                let left = st.myseq.remove(0);
                if geom.is_critical(&left) && view.crit_set.contains(&left) {
                    fx.push(Effect::Release(std::iter::once(left.clone()).collect()));
                }
                st.pre_destination = Some(left);
                if st.myseq.len() == 1 {
                    fx.push(Effect::MoveTo(st.myseq[0].clone()));
                    st.loc = Loc::S1;
                } else {
                    fx.push(Effect::MoveTo(st.myseq[1].clone()));
                }
            }
            _ => {}
        },
        Loc::S1 => match view.motion {
            Some(MotionFlag::Fail) => {
                fx.push(Effect::Stuck("motion failed".into()));
                st.loc = Loc::Stuck;
            }
            Some(MotionFlag::Done) => {
                if !view.crit_set.is_empty() {
                    fx.push(Effect::Release(view.crit_set.clone()));
                }
                fx.push(Effect::Unregister);
                fx.push(Effect::StopMotion);
                st.loc = Loc::Done;
            }
            _ => {}
        },
        Loc::Done | Loc::Stuck => {}
    }
    fx
}

/// Critical zones still ahead of (or under) the vehicle.
pub fn remaining_critical(geom: &Geometry, myseq: &[ZoneName]) -> ZoneSet {
    myseq
        .iter()
        .filter(|z| geom.zone(z).map(|z| z.kind == ZoneKind::Critical).unwrap_or(false))
        .cloned()
        .collect()
}
