//! Geocast-based registration: nearby processes agree on a participant list.
//!
//! A registering process announces itself with JOIN for `t_announce`, then
//! geocasts the candidates it heard (ECHO) for `t_echo`, and finally takes
//! the union of its own candidates and every echoed set as `rList`.
//! When a member leaves, the others drop their list, exchange ECHOs again
//! and settle on the members they heard from.
//! A settled member that hears a JOIN from a newcomer answers with an ECHO
//! of its group, so the newcomer's list covers the settled members.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::Wire;
use super::{Action, TimingParams, Timer};
use crate::gvh::Value;
use crate::net::Region;
use crate::types::{Pid, SimTime};

pub const INSTANCE: &str = "reg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegPhase {
    Idle,
    Announcing,
    Echoing,
    Done,
    /// A member left; the list is null until the echo window closes.
    Rerunning,
    /// This process unregistered.
    Left,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegError {
    #[error("registration already started")]
    AlreadyRegistering,
    #[error("not registered")]
    NotRegistered,
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub pid: Pid,
    pub xid: u32,
    region: Region,
    timing: TimingParams,
    phase: RegPhase,
    candidates: BTreeSet<Pid>,
    echoed: BTreeSet<Pid>,
    left: BTreeSet<Pid>,
    members: BTreeSet<Pid>,
    echo_heard: BTreeMap<Pid, SimTime>,
    answered: BTreeSet<Pid>,
    window_start: SimTime,
    rlist: Option<Vec<Pid>>,
    ts: Option<SimTime>,
    gen: u64,
}

impl Registration {
    pub fn new(pid: Pid, xid: u32, region: Region, timing: TimingParams) -> Self {
        Registration {
            pid,
            xid,
            region,
            timing,
            phase: RegPhase::Idle,
            candidates: BTreeSet::new(),
            echoed: BTreeSet::new(),
            left: BTreeSet::new(),
            members: BTreeSet::new(),
            echo_heard: BTreeMap::new(),
            answered: BTreeSet::new(),
            window_start: SimTime::ZERO,
            rlist: None,
            ts: None,
            gen: 0,
        }
    }

    pub fn phase(&self) -> RegPhase {
        self.phase
    }

    pub fn rlist(&self) -> Option<&[Pid]> {
        self.rlist.as_deref()
    }

    pub fn ts(&self) -> Option<SimTime> {
        self.ts
    }

    pub fn do_register(&mut self, _now: SimTime) -> Result<Vec<Action>, RegError> {
        if self.phase != RegPhase::Idle {
            return Err(RegError::AlreadyRegistering);
        }
        self.phase = RegPhase::Announcing;
        self.candidates.insert(self.pid);
        self.gen += 1;
        Ok(vec![
            self.geocast(Wire::Join {
                xid: self.xid,
                pid: self.pid,
            }),
            Action::Timer {
                after: self.timing.d,
                timer: Timer::RegJoin { gen: self.gen },
            },
            Action::Timer {
                after: self.timing.t_announce,
                timer: Timer::RegPhase { gen: self.gen },
            },
        ])
    }

    pub fn unregister(&mut self) -> Result<Vec<Action>, RegError> {
        if !matches!(self.phase, RegPhase::Done | RegPhase::Rerunning) {
            return Err(RegError::NotRegistered);
        }
        self.phase = RegPhase::Left;
        self.gen += 1;
        self.rlist = None;
        self.ts = None;
        Ok(vec![
            self.geocast(Wire::Leave {
                xid: self.xid,
                pid: self.pid,
            }),
            publish("rList", Value::Null),
            publish("ts", Value::Null),
        ])
    }

    pub fn on_message(&mut self, from: Pid, msg: &Wire, now: SimTime) -> Vec<Action> {
        match msg {
            Wire::Join { xid, pid } if *xid == self.xid => {
                if self.left.contains(pid) || *pid == self.pid {
                    return Vec::new();
                }
                match self.phase {
                    RegPhase::Announcing | RegPhase::Echoing => {
                        self.candidates.insert(*pid);
                        Vec::new()
                    }
                    RegPhase::Done => self.answer_latecomer(*pid),
                    _ => Vec::new(),
                }
            }
            Wire::Echo { xid, pids } if *xid == self.xid => {
                if !self.left.contains(&from) {
                    self.echo_heard.insert(from, now);
                }
                if matches!(self.phase, RegPhase::Announcing | RegPhase::Echoing) {
                    self.echoed.extend(pids.iter().filter(|p| !self.left.contains(p)));
                }
                Vec::new()
            }
            Wire::Leave { xid, pid } if *xid == self.xid => self.on_leave(*pid, now),
            _ => Vec::new(),
        }
    }

    /// A settled member tells a late joiner who is already here. Its own
    /// published list keeps its timestamp; the newcomer is only remembered
    /// for later reruns.
    fn answer_latecomer(&mut self, who: Pid) -> Vec<Action> {
        if !self.answered.insert(who) {
            return Vec::new();
        }
        self.members.insert(who);
        vec![
            Action::Note {
                instance: INSTANCE,
                op: "reconfirm",
                zones: Vec::new(),
                pids: vec![who],
            },
            self.geocast(Wire::Echo {
                xid: self.xid,
                pids: self.members.iter().copied().collect(),
            }),
        ]
    }

    fn on_leave(&mut self, who: Pid, now: SimTime) -> Vec<Action> {
        if who == self.pid || !self.left.insert(who) {
            return Vec::new();
        }
        self.candidates.remove(&who);
        self.echoed.remove(&who);
        self.echo_heard.remove(&who);
        self.answered.remove(&who);
        match self.phase {
            RegPhase::Done | RegPhase::Rerunning => {}
            _ => return Vec::new(),
        }
        if self.phase == RegPhase::Done {
            self.window_start = now;
        }
        self.phase = RegPhase::Rerunning;
        self.members.remove(&who);
        self.rlist = None;
        self.ts = None;
        self.gen += 1;
        vec![
            Action::Note {
                instance: INSTANCE,
                op: "rerun",
                zones: Vec::new(),
                pids: vec![who],
            },
            publish("rList", Value::Null),
            publish("ts", Value::Null),
            self.geocast(Wire::Echo {
                xid: self.xid,
                pids: self.members.iter().copied().collect(),
            }),
            Action::Timer {
                after: self.timing.t_echo,
                timer: Timer::RegPhase { gen: self.gen },
            },
        ]
    }

    pub fn on_timer(&mut self, timer: Timer, now: SimTime) -> Vec<Action> {
        match timer {
            Timer::RegJoin { gen } if gen == self.gen && self.phase == RegPhase::Announcing => vec![
                self.geocast(Wire::Join {
                    xid: self.xid,
                    pid: self.pid,
                }),
                Action::Timer {
                    after: self.timing.d,
                    timer: Timer::RegJoin { gen },
                },
            ],
            Timer::RegPhase { gen } if gen == self.gen => match self.phase {
                RegPhase::Announcing => {
                    self.phase = RegPhase::Echoing;
                    self.gen += 1;
                    vec![
                        self.geocast(Wire::Echo {
                            xid: self.xid,
                            pids: self.candidates.iter().copied().collect(),
                        }),
                        Action::Timer {
                            after: self.timing.t_echo,
                            timer: Timer::RegPhase { gen: self.gen },
                        },
                    ]
                }
                RegPhase::Echoing => {
                    let mut list: BTreeSet<Pid> = self.candidates.union(&self.echoed).copied().collect();
                    list.retain(|p| !self.left.contains(p));
                    self.finalize(list, now)
                }
                RegPhase::Rerunning => {
                    // senders heard from during this window, or just before it
                    let since = self.window_start.saturating_sub(SimTime(self.timing.d));
                    let mut list: BTreeSet<Pid> = self
                        .echo_heard
                        .iter()
                        .filter(|(p, t)| t.ms() >= since && !self.left.contains(p))
                        .map(|(p, _)| *p)
                        .collect();
                    list.insert(self.pid);
                    self.finalize(list, now)
                }
                _ => Vec::new(),
            },
            _ => Vec::new(),
        }
    }

    fn finalize(&mut self, list: BTreeSet<Pid>, now: SimTime) -> Vec<Action> {
        self.phase = RegPhase::Done;
        self.members = list.clone();
        let v: Vec<Pid> = list.into_iter().collect();
        self.rlist = Some(v.clone());
        self.ts = Some(now);
        vec![publish("rList", Value::PidList(v)), publish("ts", Value::Timestamp(now))]
    }

    fn geocast(&self, msg: Wire) -> Action {
        Action::Geocast {
            msg,
            region: self.region,
            d: self.timing.d,
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

#[cfg(test)]
mod tests {
    use super::*;

    fn mk(pid: u32) -> Registration {
        Registration::new(Pid(pid), 1, Region::disc(0.0, 0.0, 4.0), TimingParams::for_mean_delay(100))
    }

    fn timers(actions: &[Action]) -> Vec<Timer> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Timer { timer, .. } => Some(*timer),
                _ => None,
            })
            .collect()
    }

    fn phase_timer(actions: &[Action]) -> Timer {
        *timers(actions)
            .iter()
            .find(|t| matches!(t, Timer::RegPhase { .. }))
            .unwrap()
    }

    #[test]
    fn singleton_group() {
        let mut r = mk(3);
        let out = r.do_register(SimTime(0)).unwrap();
        let out = r.on_timer(phase_timer(&out), SimTime(800));
        assert_eq!(r.phase(), RegPhase::Echoing);
        r.on_timer(phase_timer(&out), SimTime(1600));
        assert_eq!(r.rlist(), Some(&[Pid(3)][..]));
        assert_eq!(r.ts(), Some(SimTime(1600)));
        assert_eq!(r.do_register(SimTime(2000)).unwrap_err(), RegError::AlreadyRegistering);
    }

    #[test]
    fn union_of_joins_and_echoes() {
        let mut r = mk(0);
        let out = r.do_register(SimTime(0)).unwrap();
        r.on_message(Pid(1), &Wire::Join { xid: 1, pid: Pid(1) }, SimTime(50));
        r.on_message(Pid(9), &Wire::Join { xid: 2, pid: Pid(9) }, SimTime(50));
        let out = r.on_timer(phase_timer(&out), SimTime(800));
        r.on_message(
            Pid(1),
            &Wire::Echo {
                xid: 1,
                pids: vec![Pid(1), Pid(2)],
            },
            SimTime(900),
        );
        r.on_timer(phase_timer(&out), SimTime(1600));
        assert_eq!(r.rlist(), Some(&[Pid(0), Pid(1), Pid(2)][..]));
    }

    #[test]
    fn unregister_requires_done() {
        let mut r = mk(0);
        assert_eq!(r.unregister().unwrap_err(), RegError::NotRegistered);
        r.do_register(SimTime(0)).unwrap();
        assert_eq!(r.unregister().unwrap_err(), RegError::NotRegistered);
    }

    #[test]
    fn survivor_reruns_after_leave() {
        let mut a = mk(0);
        let out = a.do_register(SimTime(0)).unwrap();
        a.on_message(Pid(1), &Wire::Join { xid: 1, pid: Pid(1) }, SimTime(10));
        let out = a.on_timer(phase_timer(&out), SimTime(800));
        a.on_timer(phase_timer(&out), SimTime(1600));
        assert_eq!(a.rlist(), Some(&[Pid(0), Pid(1)][..]));
        let out = a.on_message(Pid(1), &Wire::Leave { xid: 1, pid: Pid(1) }, SimTime(5000));
        assert_eq!(a.phase(), RegPhase::Rerunning);
        assert!(a.rlist().is_none());
        a.on_timer(phase_timer(&out), SimTime(5800));
        assert_eq!(a.rlist(), Some(&[Pid(0)][..]));
        assert_eq!(a.ts(), Some(SimTime(5800)));
    }

    #[test]
    fn settled_member_answers_a_late_join() {
        let mut a = mk(0);
        let out = a.do_register(SimTime(0)).unwrap();
        let out = a.on_timer(phase_timer(&out), SimTime(800));
        a.on_timer(phase_timer(&out), SimTime(1600));
        let out = a.on_message(Pid(5), &Wire::Join { xid: 1, pid: Pid(5) }, SimTime(3000));
        assert_eq!(a.rlist(), Some(&[Pid(0)][..]));
        assert_eq!(a.ts(), Some(SimTime(1600)));
        assert!(out.iter().any(|x| matches!(x, Action::Geocast { msg: Wire::Echo { pids, .. }, .. } if pids == &vec![Pid(0), Pid(5)])));
        assert!(a.on_message(Pid(5), &Wire::Join { xid: 1, pid: Pid(5) }, SimTime(3400)).is_empty());

        let mut late = mk(5);
        let out = late.do_register(SimTime(3000)).unwrap();
        late.on_message(Pid(0), &Wire::Echo { xid: 1, pids: vec![Pid(0), Pid(5)] }, SimTime(3050));
        let out = late.on_timer(phase_timer(&out), SimTime(3800));
        late.on_timer(phase_timer(&out), SimTime(4600));
        assert_eq!(late.rlist(), Some(&[Pid(0), Pid(5)][..]));
    }

    #[test]
    fn stale_phase_timer_ignored() {
        let mut r = mk(0);
        r.do_register(SimTime(0)).unwrap();
        assert!(r.on_timer(Timer::RegPhase { gen: 99 }, SimTime(800)).is_empty());
        assert_eq!(r.phase(), RegPhase::Announcing);
    }
}
