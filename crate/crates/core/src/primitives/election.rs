//! Leader election over a fixed participant list.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::Wire;
use super::{Action, Timer};
use crate::gvh::Value;
use crate::types::Pid;

pub const INSTANCE: &str = "elect";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectionAlgorithm {
    /// Highest live pid wins.
    #[default]
    Bully,
    /// Largest random ballot wins, ties to the larger pid.
    RandomBallot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElectionPhase {
    Idle,
    Running,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leader {
    Unknown,
    Elected(Pid),
    Fail,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ElectionError {
    #[error("{0} is not in plist")]
    NotInPlist(Pid),
    #[error("election already running")]
    AlreadyRunning,
}

/// Winner of a ballot round.
pub fn ballot_winner(ballots: impl IntoIterator<Item = (Pid, u64)>) -> Option<Pid> {
    ballots.into_iter().max_by_key(|(p, b)| (*b, *p)).map(|(p, _)| p)
}

#[derive(Debug, Clone)]
pub struct Election {
    pub pid: Pid,
    algorithm: ElectionAlgorithm,
    /// How long to wait for an answer from a higher pid.
    answer_timeout: u64,
    d2: u64,
    plist: Vec<Pid>,
    phase: ElectionPhase,
    leader: Leader,
    round: u32,
    answered: bool,
    ballots: BTreeMap<Pid, u64>,
}

impl Election {
    pub fn new(pid: Pid, algorithm: ElectionAlgorithm, answer_timeout: u64, d2: u64) -> Self {
        Election {
            pid,
            algorithm,
            answer_timeout,
            d2,
            plist: Vec::new(),
            phase: ElectionPhase::Idle,
            leader: Leader::Unknown,
            round: 0,
            answered: false,
            ballots: BTreeMap::new(),
        }
    }

    pub fn leader(&self) -> Leader {
        self.leader
    }

    pub fn phase(&self) -> ElectionPhase {
        self.phase
    }

    /// Starts an election. `ballot` is only used by the random-ballot
    /// algorithm.
    pub fn do_election(&mut self, plist: &[Pid], ballot: u64) -> Result<Vec<Action>, ElectionError> {
        if !plist.contains(&self.pid) {
            return Err(ElectionError::NotInPlist(self.pid));
        }
        if self.phase == ElectionPhase::Running {
            return Err(ElectionError::AlreadyRunning);
        }
        let mut p = plist.to_vec();
        p.sort();
        p.dedup();
        self.plist = p;
        self.phase = ElectionPhase::Running;
        self.leader = Leader::Unknown;
        self.round += 1;
        self.answered = false;
        let mut out = vec![Action::Timer {
            after: self.d2,
            timer: Timer::ElectDeadline { round: self.round },
        }];
        match self.algorithm {
            ElectionAlgorithm::Bully => self.bully_start(&mut out),
            ElectionAlgorithm::RandomBallot => {
                self.ballots.insert(self.pid, ballot);
                for &q in self.plist.iter().filter(|q| **q != self.pid) {
                    out.push(Action::Unicast {
                        dst: q,
                        msg: Wire::Elect {
                            round: self.round,
                            value: ballot,
                        },
                    });
                }
                self.try_decide_ballot(&mut out);
            }
        }
        Ok(out)
    }

    fn bully_start(&mut self, out: &mut Vec<Action>) {
        let higher: Vec<Pid> = self.plist.iter().copied().filter(|q| *q > self.pid).collect();
        if higher.is_empty() {
            self.announce(out);
            return;
        }
        for q in higher {
            out.push(Action::Unicast {
                dst: q,
                msg: Wire::Elect {
                    round: self.round,
                    value: self.pid.0 as u64,
                },
            });
        }
        out.push(Action::Timer {
            after: self.answer_timeout,
            timer: Timer::ElectTimeout { round: self.round },
        });
    }

    fn announce(&mut self, out: &mut Vec<Action>) {
        for &q in self.plist.iter().filter(|q| **q != self.pid) {
            out.push(Action::Unicast {
                dst: q,
                msg: Wire::Coord {
                    round: self.round,
                    leader: self.pid,
                },
            });
        }
        self.decide(Leader::Elected(self.pid), out);
    }

    fn decide(&mut self, leader: Leader, out: &mut Vec<Action>) {
        self.phase = ElectionPhase::Done;
        self.leader = leader;
        match leader {
            Leader::Elected(p) => out.push(publish("leader", Value::Pid(p))),
            Leader::Fail => out.push(publish("failed", Value::Bool(true))),
            Leader::Unknown => {}
        }
    }

    fn try_decide_ballot(&mut self, out: &mut Vec<Action>) {
        if self.plist.iter().all(|p| self.ballots.contains_key(p)) {
            let w = ballot_winner(self.ballots.iter().map(|(p, b)| (*p, *b))).expect("non-empty");
            self.decide(Leader::Elected(w), out);
        }
    }

    pub fn on_message(&mut self, from: Pid, msg: &Wire) -> Vec<Action> {
        let mut out = Vec::new();
        match (self.algorithm, msg) {
            (ElectionAlgorithm::Bully, Wire::Elect { round, .. }) => {
                if from < self.pid {
                    out.push(Action::Unicast {
                        dst: from,
                        msg: Wire::Elect {
                            round: *round,
                            value: self.pid.0 as u64,
                        },
                    });
                    if self.phase != ElectionPhase::Running && !self.plist.is_empty() {
                        self.phase = ElectionPhase::Running;
                        self.round += 1;
                        self.answered = false;
                        out.push(Action::Timer {
                            after: self.d2,
                            timer: Timer::ElectDeadline { round: self.round },
                        });
                        self.bully_start(&mut out);
                    }
                } else if self.phase == ElectionPhase::Running {
                    self.answered = true;
                }
            }
            (_, Wire::Coord { leader, .. }) => {
                if self.phase != ElectionPhase::Done || self.leader != Leader::Elected(*leader) {
                    self.decide(Leader::Elected(*leader), &mut out);
                }
            }
            (ElectionAlgorithm::RandomBallot, Wire::Elect { value, .. }) => {
                // ballots may arrive before this process starts its own round
                self.ballots.insert(from, *value);
                if self.phase == ElectionPhase::Running {
                    self.try_decide_ballot(&mut out);
                }
            }
            _ => {}
        }
        out
    }

    pub fn on_timer(&mut self, timer: Timer) -> Vec<Action> {
        let mut out = Vec::new();
        match timer {
            Timer::ElectTimeout { round } if round == self.round && self.phase == ElectionPhase::Running => {
                if !self.answered {
                    self.announce(&mut out);
                }
            }
            Timer::ElectDeadline { round } if round == self.round && self.phase == ElectionPhase::Running => {
                self.decide(Leader::Fail, &mut out);
            }
            _ => {}
        }
        out
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

    /// Runs a reliable FIFO exchange, firing answer timeouts once the network
    /// is quiet.
    fn simulate(procs: &mut [Election], initial: Vec<(Pid, Vec<Action>)>) {
        let mut queue: Vec<(Pid, Pid, Wire)> = Vec::new();
        let mut timers: Vec<(Pid, Timer)> = Vec::new();
        let absorb = |from: Pid, acts: Vec<Action>, q: &mut Vec<(Pid, Pid, Wire)>, t: &mut Vec<(Pid, Timer)>| {
            for a in acts {
                match a {
                    Action::Unicast { dst, msg } => q.push((from, dst, msg)),
                    Action::Timer {
                        timer: tm @ Timer::ElectTimeout { .. },
                        ..
                    } => t.push((from, tm)),
                    _ => {}
                }
            }
        };
        for (p, a) in initial {
            absorb(p, a, &mut queue, &mut timers);
        }
        loop {
            if !queue.is_empty() {
                let (src, dst, msg) = queue.remove(0);
                let e = procs.iter_mut().find(|e| e.pid == dst).unwrap();
                let out = e.on_message(src, &msg);
                absorb(dst, out, &mut queue, &mut timers);
            } else if !timers.is_empty() {
                let (p, t) = timers.remove(0);
                let e = procs.iter_mut().find(|e| e.pid == p).unwrap();
                let out = e.on_timer(t);
                absorb(p, out, &mut queue, &mut timers);
            } else {
                break;
            }
        }
    }

    #[test]
    fn bully_highest_pid_wins_everywhere() {
        let plist = [Pid(1), Pid(5), Pid(9)];
        let mut procs: Vec<Election> = plist
            .iter()
            .map(|p| Election::new(*p, ElectionAlgorithm::Bully, 800, 60_000))
            .collect();
        let init: Vec<(Pid, Vec<Action>)> = procs
            .iter_mut()
            .map(|e| (e.pid, e.do_election(&plist, 0).unwrap()))
            .collect();
        simulate(&mut procs, init);
        for e in &procs {
            assert_eq!(e.leader(), Leader::Elected(Pid(9)), "at {}", e.pid);
        }
    }

    #[test]
    fn singleton_elects_self_immediately() {
        let mut e = Election::new(Pid(4), ElectionAlgorithm::Bully, 800, 60_000);
        e.do_election(&[Pid(4)], 0).unwrap();
        assert_eq!(e.leader(), Leader::Elected(Pid(4)));
        let mut e = Election::new(Pid(4), ElectionAlgorithm::RandomBallot, 800, 60_000);
        e.do_election(&[Pid(4)], 17).unwrap();
        assert_eq!(e.leader(), Leader::Elected(Pid(4)));
    }

    #[test]
    fn not_in_plist() {
        let mut e = Election::new(Pid(4), ElectionAlgorithm::Bully, 800, 60_000);
        assert_eq!(e.do_election(&[Pid(1)], 0).unwrap_err(), ElectionError::NotInPlist(Pid(4)));
    }

    #[test]
    fn equal_ballots_go_to_larger_pid() {
        assert_eq!(ballot_winner([(Pid(2), 7), (Pid(8), 7), (Pid(5), 3)]), Some(Pid(8)));
        let plist = [Pid(2), Pid(8)];
        let mut procs: Vec<Election> = plist
            .iter()
            .map(|p| Election::new(*p, ElectionAlgorithm::RandomBallot, 800, 60_000))
            .collect();
        let a = procs[0].do_election(&plist, 7).unwrap();
        let b = procs[1].do_election(&plist, 7).unwrap();
        simulate(&mut procs, vec![(Pid(2), a), (Pid(8), b)]);
        assert!(procs.iter().all(|e| e.leader() == Leader::Elected(Pid(8))));
    }

    #[test]
    fn deadline_without_answer_fails() {
        let mut e = Election::new(Pid(1), ElectionAlgorithm::RandomBallot, 800, 60_000);
        e.do_election(&[Pid(1), Pid(2)], 3).unwrap();
        e.on_timer(Timer::ElectDeadline { round: 1 });
        assert_eq!(e.leader(), Leader::Fail);
    }
}
