//! Exhaustive interleaving search over the mutex state machines.
//!
//! Each process issues one request for a fixed zone set, then gives the zones
//! back one at a time in ascending order. The network is a reliable multiset:
//! any in-flight message may be delivered next. Timers are left out, so
//! nothing is ever retransmitted or abandoned.

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use coordsim::gvh::Value;
use coordsim::primitives::{Action, Mutex, Wire};
use coordsim::types::{Pid, ZoneName, ZoneSet};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Step {
    Grant(Pid),
    Release(Pid, ZoneName),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Phase {
    Idle,
    Waiting,
    Holding,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Proc {
    mux: Mutex,
    want: ZoneSet,
    phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct State {
    procs: Vec<Proc>,
    /// Sorted, so equal multisets compare equal.
    net: Vec<(Pid, Pid, Wire)>,
}

#[derive(Debug, Default)]
pub struct Outcome {
    /// Every complete grant/release sequence.
    pub orderings: BTreeSet<Vec<Step>>,
    pub states: usize,
    /// Reachable states where two processes held a common zone.
    pub overlaps: usize,
    /// Non-final states with no enabled transition.
    pub deadlocks: usize,
    pub truncated: bool,
}

type Suffixes = Rc<BTreeSet<Vec<Step>>>;

pub struct Enumerator {
    depth: usize,
    memo: HashMap<State, Suffixes>,
    out: Outcome,
}

impl Enumerator {
    pub fn run(requests: &[(Pid, ZoneSet)], depth: usize) -> Outcome {
        let plist: Vec<Pid> = requests.iter().map(|r| r.0).collect();
        let procs = requests
            .iter()
            .map(|(p, z)| Proc {
                mux: Mutex::new(*p, 0, 1, 1),
                want: z.clone(),
                phase: Phase::Idle,
            })
            .collect();
        let mut e = Enumerator {
            depth,
            memo: HashMap::new(),
            out: Outcome::default(),
        };
        let init = State { procs, net: Vec::new() };
        let all = e.explore(init, &plist, 0);
        e.out.orderings = (*all).clone();
        e.out.states = e.memo.len();
        e.out
    }

    fn explore(&mut self, s: State, plist: &[Pid], depth: usize) -> Suffixes {
        if let Some(r) = self.memo.get(&s) {
            return r.clone();
        }
        let held: Vec<&ZoneSet> = s.procs.iter().map(|p| p.mux.crit_set()).collect();
        for i in 0..held.len() {
            for j in i + 1..held.len() {
                if !held[i].is_disjoint(held[j]) {
                    self.out.overlaps += 1;
                }
            }
        }
        let mut acc: BTreeSet<Vec<Step>> = BTreeSet::new();
        if s.procs.iter().all(|p| p.phase == Phase::Finished) {
            acc.insert(Vec::new());
        } else if depth >= self.depth {
            self.out.truncated = true;
        } else {
            let mut moved = false;
            for i in 0..s.procs.len() {
                match s.procs[i].phase {
                    Phase::Idle => {
                        let mut n = s.clone();
                        let want = n.procs[i].want.clone();
                        let acts = n.procs[i].mux.do_mutex(want, plist).expect("fresh request");
                        n.procs[i].phase = Phase::Waiting;
                        let steps = absorb(&mut n, i, acts);
                        self.follow(n, steps, plist, depth, &mut acc);
                        moved = true;
                    }
                    Phase::Holding => {
                        let mut n = s.clone();
                        let pid = n.procs[i].mux.pid;
                        let z = n.procs[i].mux.crit_set().iter().next().cloned().expect("holding");
                        let acts = n.procs[i].mux.release(&[z.clone()].into_iter().collect()).expect("held");
                        if n.procs[i].mux.crit_set().is_empty() {
                            n.procs[i].phase = Phase::Finished;
                        }
                        let mut steps = vec![Step::Release(pid, z)];
                        steps.extend(absorb(&mut n, i, acts));
                        self.follow(n, steps, plist, depth, &mut acc);
                        moved = true;
                    }
                    _ => {}
                }
            }
            let mut seen = BTreeSet::new();
            for k in 0..s.net.len() {
                if !seen.insert(&s.net[k]) {
                    continue;
                }
                let mut n = s.clone();
                let (src, dst, msg) = n.net.remove(k);
                let i = n.procs.iter().position(|p| p.mux.pid == dst).expect("known pid");
                let acts = n.procs[i].mux.on_message(src, &msg);
                let steps = absorb(&mut n, i, acts);
                self.follow(n, steps, plist, depth, &mut acc);
                moved = true;
            }
            if !moved {
                self.out.deadlocks += 1;
            }
        }
        let r = Rc::new(acc);
        self.memo.insert(s, r.clone());
        r
    }

    fn follow(&mut self, mut n: State, steps: Vec<Step>, plist: &[Pid], depth: usize, acc: &mut BTreeSet<Vec<Step>>) {
        n.net.sort();
        for suffix in self.explore(n, plist, depth + 1).iter() {
            let mut v = steps.clone();
            v.extend(suffix.iter().cloned());
            acc.insert(v);
        }
    }
}

/// Applies the actions of process `i`, returning a grant step if one happened.
fn absorb(s: &mut State, i: usize, acts: Vec<Action>) -> Vec<Step> {
    let pid = s.procs[i].mux.pid;
    let mut steps = Vec::new();
    for a in acts {
        match a {
            Action::Unicast { dst, msg } => s.net.push((pid, dst, msg)),
            Action::Publish {
                field: "crit",
                value: Value::Bool(true),
                ..
            } => {
                s.procs[i].phase = Phase::Holding;
                steps.push(Step::Grant(pid));
            }
            _ => {}
        }
    }
    steps
}
