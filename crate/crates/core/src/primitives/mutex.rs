//! Multi-resource Ricart–Agrawala mutual exclusion.
//!
//! A request carries the whole zone set and one Lamport stamp. A peer replies
//! OK unless it holds one of the requested zones or has its own overlapping
//! request with a smaller stamp; in that case the request is deferred until
//! the conflict disappears. The requester takes every zone at once when all
//! of `plist` has replied, and may give them back one at a time.
//!
//! A process that sends a REQUEST is a participant even if it was missing
//! from the list this process was given; it is added and, while a request
//! of ours is outstanding, asked for its OK as well.
//!
//! Unicast is unreliable, so REQUEST is retransmitted to silent peers with
//! exponential backoff and a peer answers a duplicate exactly as it answered
//! the original.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::{Stamp, Wire};
use super::{Action, Timer};
use crate::gvh::Value;
use crate::types::{Pid, ZoneSet};

pub const INSTANCE: &str = "mux";

/// Cap on the retransmission backoff, as a multiple of the base period.
const MAX_BACKOFF: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutexFault {
    #[default]
    None,
    /// Replies OK to every request regardless of conflicts.
    UnconditionalOk,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MutexError {
    #[error("a request is pending or zones are still held")]
    RequestPending,
    #[error("empty zone set")]
    EmptyRequest,
    #[error("{0} is not in plist")]
    NotInPlist(crate::types::Pid),
    #[error("zone not held")]
    NotHeld,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pending {
    pub zones: ZoneSet,
    pub stamp: Stamp,
    pub oks: BTreeSet<Pid>,
    gen: u64,
    rto: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mutex {
    pub pid: Pid,
    pub xid: u32,
    plist: Vec<Pid>,
    clock: u64,
    pending: Option<Pending>,
    crit_set: ZoneSet,
    crit: bool,
    failed: bool,
    deferred: BTreeMap<Pid, (ZoneSet, Stamp)>,
    latest: BTreeMap<Pid, Stamp>,
    gen: u64,
    progress_gen: u64,
    rto: u64,
    d2: u64,
    fault: MutexFault,
}

impl Mutex {
    /// `rto` is the base REQUEST retransmission period and `d2` the
    /// no-progress timeout after which the request is abandoned.
    pub fn new(pid: Pid, xid: u32, rto: u64, d2: u64) -> Self {
        Mutex {
            pid,
            xid,
            plist: Vec::new(),
            clock: 0,
            pending: None,
            crit_set: ZoneSet::new(),
            crit: false,
            failed: false,
            deferred: BTreeMap::new(),
            latest: BTreeMap::new(),
            gen: 0,
            progress_gen: 0,
            rto: rto.max(1),
            d2,
            fault: MutexFault::None,
        }
    }

    pub fn with_fault(mut self, fault: MutexFault) -> Self {
        self.fault = fault;
        self
    }

    pub fn crit(&self) -> bool {
        self.crit
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn crit_set(&self) -> &ZoneSet {
        &self.crit_set
    }

    pub fn pending(&self) -> Option<&Pending> {
        self.pending.as_ref()
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn deferred(&self) -> impl Iterator<Item = (Pid, &ZoneSet, Stamp)> {
        self.deferred.iter().map(|(p, (z, s))| (*p, z, *s))
    }

    pub fn do_mutex(&mut self, zones: ZoneSet, plist: &[Pid]) -> Result<Vec<Action>, MutexError> {
        if self.pending.is_some() || !self.crit_set.is_empty() {
            return Err(MutexError::RequestPending);
        }
        if zones.is_empty() {
            return Err(MutexError::EmptyRequest);
        }
        if !plist.contains(&self.pid) {
            return Err(MutexError::NotInPlist(self.pid));
        }
        if self.plist.is_empty() {
            self.plist = plist.to_vec();
            self.plist.extend(self.latest.keys().copied());
            self.plist.sort();
            self.plist.dedup();
        }
        self.clock += 1;
        self.gen += 1;
        self.progress_gen += 1;
        let stamp = Stamp::new(self.clock, self.pid);
        let mut out = vec![publish("request", Value::ZoneList(zones.iter().cloned().collect()))];
        if self.failed {
            self.failed = false;
            out.push(publish("failed", Value::Bool(false)));
        }
        let mut oks = BTreeSet::new();
        oks.insert(self.pid);
        self.pending = Some(Pending {
            zones: zones.clone(),
            stamp,
            oks,
            gen: self.gen,
            rto: self.rto,
        });
        for &peer in self.plist.iter().filter(|p| **p != self.pid) {
            out.push(Action::Unicast {
                dst: peer,
                msg: Wire::Request {
                    xid: self.xid,
                    zones: zones.clone(),
                    stamp,
                },
            });
        }
        out.push(Action::Timer {
            after: self.rto,
            timer: Timer::MutexRetransmit { gen: self.gen },
        });
        out.push(Action::Timer {
            after: self.d2,
            timer: Timer::MutexProgress { gen: self.progress_gen },
        });
        self.try_grant(&mut out);
        Ok(out)
    }

    /// Gives back `zones`; crit stays true until nothing is held.
    pub fn release(&mut self, zones: &ZoneSet) -> Result<Vec<Action>, MutexError> {
        if zones.is_empty() || !zones.is_subset(&self.crit_set) {
            return Err(MutexError::NotHeld);
        }
        for z in zones {
            self.crit_set.remove(z);
        }
        let mut out = vec![publish("crit_set", zone_list(&self.crit_set))];
        if self.crit_set.is_empty() {
            self.crit = false;
            out.push(publish("crit", Value::Bool(false)));
            out.push(publish("request", Value::Null));
        }
        for (peer, (z, _)) in &self.deferred {
            if !z.is_disjoint(zones) {
                out.push(Action::Unicast {
                    dst: *peer,
                    msg: Wire::ReleaseNotify {
                        xid: self.xid,
                        zones: zones.clone(),
                    },
                });
            }
        }
        self.flush_deferred(&mut out);
        Ok(out)
    }

    pub fn on_message(&mut self, from: Pid, msg: &Wire) -> Vec<Action> {
        let mut out = Vec::new();
        match msg {
            Wire::Request { xid, zones, stamp } if *xid == self.xid => {
                self.clock = self.clock.max(stamp.clock) + 1;
                if self.latest.get(&from).is_some_and(|s| s > stamp) {
                    return out;
                }
                self.latest.insert(from, *stamp);
                self.admit(from, &mut out);
                if self.fault == MutexFault::UnconditionalOk || !self.conflicts(zones, *stamp) {
                    self.deferred.remove(&from);
                    out.push(self.ok(from, *stamp));
                } else {
                    self.deferred.insert(from, (zones.clone(), *stamp));
                }
            }
            Wire::Ok { xid, stamp } if *xid == self.xid => {
                let granted = match self.pending.as_mut() {
                    Some(p) if p.stamp == *stamp => p.oks.insert(from),
                    _ => false,
                };
                if granted {
                    self.try_grant(&mut out);
                }
            }
            Wire::ReleaseNotify { xid, .. } if *xid == self.xid => {
                if self.pending.is_some() {
                    self.progress_gen += 1;
                    out.push(Action::Timer {
                        after: self.d2,
                        timer: Timer::MutexProgress { gen: self.progress_gen },
                    });
                }
            }
            _ => {}
        }
        out
    }

    pub fn on_timer(&mut self, timer: Timer) -> Vec<Action> {
        let mut out = Vec::new();
        match timer {
            Timer::MutexRetransmit { gen } => {
                let Some(p) = self.pending.as_mut() else {
                    return out;
                };
                if p.gen != gen {
                    return out;
                }
                for &peer in self.plist.iter().filter(|q| !p.oks.contains(q)) {
                    out.push(Action::Unicast {
                        dst: peer,
                        msg: Wire::Request {
                            xid: self.xid,
                            zones: p.zones.clone(),
                            stamp: p.stamp,
                        },
                    });
                }
                p.rto = (p.rto * 2).min(self.rto * MAX_BACKOFF);
                out.push(Action::Timer {
                    after: p.rto,
                    timer: Timer::MutexRetransmit { gen },
                });
            }
            Timer::MutexProgress { gen } => {
                if gen != self.progress_gen || self.pending.is_none() {
                    return out;
                }
                let p = self.pending.take().expect("checked");
                self.failed = true;
                out.push(Action::Note {
                    instance: INSTANCE,
                    op: "abandon",
                    zones: p.zones.iter().cloned().collect(),
                    pids: self.plist.iter().filter(|q| !p.oks.contains(q)).copied().collect(),
                });
                out.push(publish("failed", Value::Bool(true)));
                out.push(publish("request", Value::Null));
                self.flush_deferred(&mut out);
            }
            _ => {}
        }
        out
    }

    fn admit(&mut self, peer: Pid, out: &mut Vec<Action>) {
        if self.plist.is_empty() || self.plist.contains(&peer) {
            return;
        }
        self.plist.push(peer);
        self.plist.sort();
        if let Some(p) = &self.pending {
            out.push(Action::Unicast {
                dst: peer,
                msg: Wire::Request {
                    xid: self.xid,
                    zones: p.zones.clone(),
                    stamp: p.stamp,
                },
            });
        }
    }

    fn conflicts(&self, zones: &ZoneSet, stamp: Stamp) -> bool {
        if !self.crit_set.is_disjoint(zones) {
            return true;
        }
        match &self.pending {
            Some(p) => p.stamp < stamp && !p.zones.is_disjoint(zones),
            None => false,
        }
    }

    fn ok(&self, dst: Pid, stamp: Stamp) -> Action {
        Action::Unicast {
            dst,
            msg: Wire::Ok { xid: self.xid, stamp },
        }
    }

    fn try_grant(&mut self, out: &mut Vec<Action>) {
        let complete = match &self.pending {
            Some(p) => self.plist.iter().all(|q| p.oks.contains(q)),
            None => false,
        };
        if !complete {
            return;
        }
        let p = self.pending.take().expect("checked");
        self.crit_set = p.zones;
        self.crit = true;
        self.progress_gen += 1;
        out.push(publish("crit_set", zone_list(&self.crit_set)));
        out.push(publish("crit", Value::Bool(true)));
        self.flush_deferred(out);
    }

    fn flush_deferred(&mut self, out: &mut Vec<Action>) {
        let mut ready: Vec<(Stamp, Pid)> = self
            .deferred
            .iter()
            .filter(|(_, (z, s))| !self.conflicts(z, *s))
            .map(|(p, (_, s))| (*s, *p))
            .collect();
        ready.sort();
        for (stamp, peer) in ready {
            self.deferred.remove(&peer);
            out.push(self.ok(peer, stamp));
        }
    }
}

fn publish(field: &'static str, value: Value) -> Action {
    Action::Publish {
        instance: INSTANCE,
        field,
        value,
    }
}

fn zone_list(z: &ZoneSet) -> Value {
    Value::ZoneList(z.iter().cloned().collect())
}
