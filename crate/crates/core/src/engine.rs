//! Deterministic discrete-event kernel.
//!
//! The [`Engine`] owns a virtual clock, a priority queue ordered by
//! `(fire_at, seq)`, a table of spawned processes and a set of named random
//! streams. Everything domain specific lives behind the [`Model`] trait: the
//! engine pops events, advances the clock and hands each event to the model.
//!
//! Processes are cooperative step functions. A spawned process receives an
//! `AppStep` at its start time and then every `step_period` milliseconds until
//! its step returns [`StepOutcome::Done`] or the process crashes.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trace::{RecordBody, TraceRecord};
use crate::types::{Actor, Pid, SimTime};

/// Default cadence of the application loop.
pub const DEFAULT_STEP_PERIOD_MS: u64 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("cannot schedule at {at} (now is {now})")]
    SchedulingInPast { at: SimTime, now: SimTime },
    #[error("process {0} already spawned")]
    DuplicatePid(Pid),
    #[error("process {0} was never spawned")]
    UnknownPid(Pid),
    #[error("invalid distribution parameter: {0}")]
    InvalidDistributionParam(String),
}

/// Identifier returned by [`Scheduler::schedule`]; equal to the event's
/// insertion sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind<P> {
    MessageDelivery(P),
    TimerFire(P),
    MotionTick,
    AppStep,
    Crash,
}

impl<P> EventKind<P> {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::MessageDelivery(_) => "message_delivery",
            EventKind::TimerFire(_) => "timer_fire",
            EventKind::MotionTick => "motion_tick",
            EventKind::AppStep => "app_step",
            EventKind::Crash => "crash",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: Actor,
    pub kind: EventKind<P>,
}

struct Queued<P>(Event<P>);

impl<P> Queued<P> {
    fn key(&self) -> (SimTime, u64) {
        (self.0.fire_at, self.0.seq)
    }
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform01,
    Exponential { mean: f64 },
    Bernoulli { p: f64 },
}

/// Independent, named pseudo-random streams derived from one master seed.
///
/// Each stream is a ChaCha8 generator keyed by `sha256(seed || stream_id)`, so
/// draws on one stream never perturb another and the sequence is identical on
/// every host.
#[derive(Debug, Clone)]
pub struct RngStreams {
    master: u64,
    streams: BTreeMap<String, ChaCha8Rng>,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        RngStreams {
            master,
            streams: BTreeMap::new(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master
    }

    fn stream(&mut self, id: &str) -> &mut ChaCha8Rng {
        let master = self.master;
        self.streams.entry(id.to_string()).or_insert_with(|| {
            let mut h = Sha256::new();
            h.update(master.to_le_bytes());
            h.update(id.as_bytes());
            let seed: [u8; 32] = h.finalize().into();
            ChaCha8Rng::from_seed(seed)
        })
    }

    pub fn draw(&mut self, id: &str, dist: Distribution) -> Result<f64, EngineError> {
        match dist {
            Distribution::Exponential { mean } if !(mean > 0.0 && mean.is_finite()) => {
                return Err(EngineError::InvalidDistributionParam(format!(
                    "exponential mean must be > 0, got {mean}"
                )))
            }
            Distribution::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                return Err(EngineError::InvalidDistributionParam(format!(
                    "bernoulli p must lie in [0,1], got {p}"
                )))
            }
            _ => {}
        }
        let u: f64 = self.stream(id).random();
        Ok(match dist {
            Distribution::Uniform01 => u,
            // inverse CDF through libm so the value is bit-identical across hosts
            Distribution::Exponential { mean } => -mean * libm::log(1.0 - u),
            Distribution::Bernoulli { p } => {
                if u < p {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range(&mut self, id: &str, lo: u64, hi: u64) -> u64 {
        if hi <= lo {
            return lo;
        }
        self.stream(id).random_range(lo..=hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcStatus {
    Running,
    Terminated,
    Crashed,
}

#[derive(Debug, Clone)]
struct ProcEntry {
    period: u64,
    status: ProcStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    Until(SimTime),
    Quiescence,
    AllDone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    Until,
    Quiescence,
    AllDone,
    Horizon,
    Halted(String),
}

impl StopReason {
    pub fn label(&self) -> String {
        match self {
            StopReason::Until => "until".into(),
            StopReason::Quiescence => "quiescence".into(),
            StopReason::AllDone => "all_done".into(),
            StopReason::Horizon => "horizon".into(),
            StopReason::Halted(why) => format!("halted: {why}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Halt(String),
}

/// The part of the engine a [`Model`] may touch while handling an event.
pub struct Scheduler<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    rng: RngStreams,
    procs: BTreeMap<Pid, ProcEntry>,
    trace: Vec<TraceRecord>,
    event_index: u64,
    step_period: u64,
}

impl<P> Scheduler<P> {
    fn new(seed: u64) -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            rng: RngStreams::new(seed),
            procs: BTreeMap::new(),
            trace: Vec::new(),
            event_index: 0,
            step_period: DEFAULT_STEP_PERIOD_MS,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: Actor,
        kind: EventKind<P>,
    ) -> Result<EventId, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::SchedulingInPast {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued(Event {
            fire_at,
            seq,
            target,
            kind,
        })));
        Ok(EventId(seq))
    }

    /// Schedules `delay` milliseconds from now. Never fails.
    pub fn schedule_in(&mut self, delay: u64, target: Actor, kind: EventKind<P>) -> EventId {
        let at = self.now + delay;
        self.schedule(at, target, kind)
            .expect("now + delay is never in the past")
    }

    pub fn draw(&mut self, stream: &str, dist: Distribution) -> Result<f64, EngineError> {
        self.rng.draw(stream, dist)
    }

    pub fn rng(&mut self) -> &mut RngStreams {
        &mut self.rng
    }

    pub fn emit(&mut self, actor: Actor, body: RecordBody) {
        self.trace.push(TraceRecord {
            time: self.now,
            ev: self.event_index,
            pid: actor,
            body,
        });
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn status(&self, pid: Pid) -> Option<ProcStatus> {
        self.procs.get(&pid).map(|e| e.status)
    }

    pub fn is_crashed(&self, pid: Pid) -> bool {
        self.status(pid) == Some(ProcStatus::Crashed)
    }

    pub fn pids(&self) -> impl Iterator<Item = Pid> + '_ {
        self.procs.keys().copied()
    }

    /// Schedules a crash of `pid` at `at`.
    pub fn schedule_crash(&mut self, pid: Pid, at: SimTime) -> Result<EventId, EngineError> {
        if !self.procs.contains_key(&pid) {
            return Err(EngineError::UnknownPid(pid));
        }
        self.schedule(at, Actor::Process(pid), EventKind::Crash)
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn all_terminal(&self) -> bool {
        self.procs.values().all(|e| e.status != ProcStatus::Running)
    }
}

/// Domain logic driven by the engine.
pub trait Model {
    type Payload;
    type Behavior;

    /// Registers a freshly spawned process.
    fn install(&mut self, pid: Pid, behavior: Self::Behavior, sched: &mut Scheduler<Self::Payload>);

    /// One cooperative application step.
    fn app_step(&mut self, pid: Pid, sched: &mut Scheduler<Self::Payload>) -> StepOutcome;

    /// Any event other than `AppStep` and `Crash`.
    fn handle(&mut self, event: Event<Self::Payload>, sched: &mut Scheduler<Self::Payload>);

    fn on_crash(&mut self, _pid: Pid, _sched: &mut Scheduler<Self::Payload>) {}

    /// Called once before the first event and after every dispatch.
    fn checkpoint(&mut self, _sched: &mut Scheduler<Self::Payload>) -> Flow {
        Flow::Continue
    }
}

pub struct Engine<M: Model> {
    pub sched: Scheduler<M::Payload>,
    pub model: M,
    horizon: Option<SimTime>,
    started: bool,
}

impl<M: Model> Engine<M> {
    pub fn new(model: M, master_seed: u64) -> Self {
        Engine {
            sched: Scheduler::new(master_seed),
            model,
            horizon: None,
            started: false,
        }
    }

    pub fn with_step_period(mut self, ms: u64) -> Self {
        self.sched.step_period = ms.max(1);
        self
    }

    /// Hard upper bound on virtual time regardless of the stop condition.
    pub fn with_horizon(mut self, horizon: SimTime) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn now(&self) -> SimTime {
        self.sched.now
    }

    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: Actor,
        kind: EventKind<M::Payload>,
    ) -> Result<EventId, EngineError> {
        self.sched.schedule(fire_at, target, kind)
    }

    pub fn draw(&mut self, stream: &str, dist: Distribution) -> Result<f64, EngineError> {
        self.sched.draw(stream, dist)
    }

    pub fn spawn_process(
        &mut self,
        pid: Pid,
        behavior: M::Behavior,
        start_at: SimTime,
    ) -> Result<(), EngineError> {
        let period = self.sched.step_period;
        self.spawn_process_with_period(pid, behavior, start_at, period)
    }

    pub fn spawn_process_with_period(
        &mut self,
        pid: Pid,
        behavior: M::Behavior,
        start_at: SimTime,
        period: u64,
    ) -> Result<(), EngineError> {
        if self.sched.procs.contains_key(&pid) {
            return Err(EngineError::DuplicatePid(pid));
        }
        if start_at < self.sched.now {
            return Err(EngineError::SchedulingInPast {
                at: start_at,
                now: self.sched.now,
            });
        }
        self.sched.procs.insert(
            pid,
            ProcEntry {
                period: period.max(1),
                status: ProcStatus::Running,
            },
        );
        self.model.install(pid, behavior, &mut self.sched);
        self.sched
            .schedule(start_at, Actor::Process(pid), EventKind::AppStep)?;
        Ok(())
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.sched.trace
    }

    pub fn into_parts(self) -> (M, Vec<TraceRecord>) {
        (self.model, self.sched.trace)
    }

    /// Runs until `stop` holds, the horizon is reached or the model halts.
    pub fn run(&mut self, stop: Stop) -> StopReason {
        if !self.started {
            self.started = true;
            self.sched.emit(Actor::World, RecordBody::Start);
            if let Flow::Halt(why) = self.model.checkpoint(&mut self.sched) {
                return self.finish(StopReason::Halted(why));
            }
        }
        loop {
            let next_at = match self.sched.queue.peek() {
                Some(Reverse(q)) => q.0.fire_at,
                None => {
                    let reason = match stop {
                        Stop::Until(t) => {
                            self.sched.now = self.sched.now.max(t);
                            StopReason::Until
                        }
                        Stop::Quiescence => StopReason::Quiescence,
                        Stop::AllDone => StopReason::AllDone,
                    };
                    return self.finish(reason);
                }
            };
            if let Stop::Until(t) = stop {
                if next_at > t {
                    self.sched.now = t;
                    return self.finish(StopReason::Until);
                }
            }
            if let Some(h) = self.horizon {
                if next_at > h {
                    self.sched.now = h;
                    return self.finish(StopReason::Horizon);
                }
            }
            let Reverse(Queued(event)) = self.sched.queue.pop().expect("peeked");
            debug_assert!(event.fire_at >= self.sched.now);
            self.sched.now = event.fire_at;
            self.sched.event_index += 1;
            self.dispatch(event);
            if let Flow::Halt(why) = self.model.checkpoint(&mut self.sched) {
                return self.finish(StopReason::Halted(why));
            }
            if stop == Stop::AllDone && self.sched.all_terminal() && self.sched.queue.is_empty() {
                return self.finish(StopReason::AllDone);
            }
        }
    }

    fn finish(&mut self, reason: StopReason) -> StopReason {
        self.sched.emit(
            Actor::World,
            RecordBody::Stop {
                reason: reason.label(),
            },
        );
        reason
    }

    fn dispatch(&mut self, event: Event<M::Payload>) {
        match (&event.kind, event.target) {
            (EventKind::AppStep, Actor::Process(pid)) => {
                let Some(entry) = self.sched.procs.get(&pid) else {
                    return;
                };
                if entry.status != ProcStatus::Running {
                    return;
                }
                let period = entry.period;
                match self.model.app_step(pid, &mut self.sched) {
                    StepOutcome::Continue => {
                        self.sched
                            .schedule_in(period, Actor::Process(pid), EventKind::AppStep);
                    }
                    StepOutcome::Done => {
                        if let Some(e) = self.sched.procs.get_mut(&pid) {
                            if e.status == ProcStatus::Running {
                                e.status = ProcStatus::Terminated;
                            }
                        }
                    }
                }
            }
            (EventKind::Crash, Actor::Process(pid)) => {
                let Some(entry) = self.sched.procs.get_mut(&pid) else {
                    return;
                };
                if entry.status == ProcStatus::Crashed {
                    return;
                }
                entry.status = ProcStatus::Crashed;
                self.sched.emit(Actor::Process(pid), RecordBody::Crash);
                self.model.on_crash(pid, &mut self.sched);
            }
            _ => self.model.handle(event, &mut self.sched),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Records the order in which events reach the model.
    #[derive(Default)]
    struct Recorder {
        seen: Vec<(SimTime, u32)>,
        steps: BTreeMap<Pid, Vec<SimTime>>,
        max_steps: usize,
    }

    impl Model for Recorder {
        type Payload = u32;
        type Behavior = ();

        fn install(&mut self, pid: Pid, _: (), _: &mut Scheduler<u32>) {
            self.steps.insert(pid, Vec::new());
        }

        fn app_step(&mut self, pid: Pid, sched: &mut Scheduler<u32>) -> StepOutcome {
            let v = self.steps.get_mut(&pid).unwrap();
            v.push(sched.now());
            if v.len() >= self.max_steps {
                StepOutcome::Done
            } else {
                StepOutcome::Continue
            }
        }

        fn handle(&mut self, event: Event<u32>, sched: &mut Scheduler<u32>) {
            if let EventKind::TimerFire(tag) = event.kind {
                self.seen.push((sched.now(), tag));
            }
        }
    }

    fn engine() -> Engine<Recorder> {
        Engine::new(
            Recorder {
                max_steps: 3,
                ..Default::default()
            },
            1,
        )
    }

    #[test]
    fn zero_delay_event_fires_before_later_ones() {
        let mut e = engine();
        e.schedule(SimTime(10), Actor::World, EventKind::TimerFire(2)).unwrap();
        e.schedule(SimTime(0), Actor::World, EventKind::TimerFire(1)).unwrap();
        e.run(Stop::Quiescence);
        assert_eq!(e.model.seen, vec![(SimTime(0), 1), (SimTime(10), 2)]);
    }

    #[test]
    fn same_time_events_keep_insertion_order() {
        let mut e = engine();
        for tag in 0..5 {
            e.schedule(SimTime(7), Actor::World, EventKind::TimerFire(tag)).unwrap();
        }
        e.run(Stop::Quiescence);
        let tags: Vec<u32> = e.model.seen.iter().map(|s| s.1).collect();
        assert_eq!(tags, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut e = engine();
        e.schedule(SimTime(50), Actor::World, EventKind::TimerFire(0)).unwrap();
        e.run(Stop::Quiescence);
        assert_eq!(e.now(), SimTime(50));
        let err = e
            .schedule(SimTime(49), Actor::World, EventKind::TimerFire(0))
            .unwrap_err();
        assert_eq!(
            err,
            EngineError::SchedulingInPast {
                at: SimTime(49),
                now: SimTime(50)
            }
        );
    }

    #[test]
    fn empty_run_until_advances_clock_and_logs_start_stop() {
        let mut e = engine();
        assert_eq!(e.now(), SimTime::ZERO);
        let r = e.run(Stop::Until(SimTime(1000)));
        assert_eq!(r, StopReason::Until);
        assert_eq!(e.now(), SimTime(1000));
        let kinds: Vec<&str> = e.trace().iter().map(|r| r.body.kind()).collect();
        assert_eq!(kinds, vec!["start", "stop"]);
    }

    #[test]
    fn now_reflects_last_dispatched_event() {
        let mut e = engine();
        e.schedule(SimTime(250), Actor::World, EventKind::TimerFire(0)).unwrap();
        e.run(Stop::Until(SimTime(250)));
        assert_eq!(e.now(), SimTime(250));
        assert_eq!(e.now(), e.now());
    }

    #[test]
    fn app_steps_follow_period() {
        let mut e = engine();
        e.spawn_process(Pid(0), (), SimTime(0)).unwrap();
        e.spawn_process(Pid(1), (), SimTime(50)).unwrap();
        let r = e.run(Stop::AllDone);
        assert_eq!(r, StopReason::AllDone);
        assert_eq!(e.model.steps[&Pid(0)], vec![SimTime(0), SimTime(100), SimTime(200)]);
        assert_eq!(e.model.steps[&Pid(1)], vec![SimTime(50), SimTime(150), SimTime(250)]);
    }

    #[test]
    fn staggered_spawns_step_first_at_their_start() {
        let mut e = engine();
        for (i, t) in [0u64, 50, 100, 150].into_iter().enumerate() {
            e.spawn_process(Pid(i as u32), (), SimTime(t)).unwrap();
        }
        e.run(Stop::AllDone);
        for (i, t) in [0u64, 50, 100, 150].into_iter().enumerate() {
            assert_eq!(e.model.steps[&Pid(i as u32)][0], SimTime(t));
        }
    }

    #[test]
    fn duplicate_pid_rejected() {
        let mut e = engine();
        e.spawn_process(Pid(3), (), SimTime(0)).unwrap();
        assert_eq!(
            e.spawn_process(Pid(3), (), SimTime(0)),
            Err(EngineError::DuplicatePid(Pid(3)))
        );
    }

    #[test]
    fn crashed_process_stops_stepping() {
        let mut e = Engine::new(
            Recorder {
                max_steps: 100,
                ..Default::default()
            },
            1,
        );
        e.spawn_process(Pid(0), (), SimTime(0)).unwrap();
        e.sched.schedule_crash(Pid(0), SimTime(250)).unwrap();
        e.run(Stop::AllDone);
        assert_eq!(e.model.steps[&Pid(0)].len(), 3);
        assert!(e.sched.is_crashed(Pid(0)));
        assert_eq!(
            e.sched.schedule_crash(Pid(9), SimTime(300)),
            Err(EngineError::UnknownPid(Pid(9)))
        );
    }

    #[test]
    fn bernoulli_extremes() {
        let mut r = RngStreams::new(42);
        for _ in 0..1000 {
            assert_eq!(r.draw("b", Distribution::Bernoulli { p: 0.0 }).unwrap(), 0.0);
            assert_eq!(r.draw("b", Distribution::Bernoulli { p: 1.0 }).unwrap(), 1.0);
        }
    }

    #[test]
    fn invalid_parameters() {
        let mut r = RngStreams::new(0);
        for d in [
            Distribution::Exponential { mean: 0.0 },
            Distribution::Exponential { mean: -3.0 },
            Distribution::Bernoulli { p: -0.1 },
            Distribution::Bernoulli { p: 1.5 },
        ] {
            assert!(matches!(
                r.draw("x", d),
                Err(EngineError::InvalidDistributionParam(_))
            ));
        }
    }

    #[test]
    fn exponential_mean_law_of_large_numbers() {
        let mut r = RngStreams::new(2024);
        let n = 100_000;
        let sum: f64 = (0..n)
            .map(|_| r.draw("d", Distribution::Exponential { mean: 100.0 }).unwrap())
            .sum();
        let mean = sum / n as f64;
        assert!((mean - 100.0).abs() <= 5.0, "mean {mean}");
    }

    #[test]
    fn streams_are_independent() {
        let mut a = RngStreams::new(9);
        let mut b = RngStreams::new(9);
        let xs: Vec<f64> = (0..20).map(|_| a.draw("s1", Distribution::Uniform01).unwrap()).collect();
        let mut ys = Vec::new();
        for _ in 0..20 {
            b.draw("s2", Distribution::Uniform01).unwrap();
            ys.push(b.draw("s1", Distribution::Uniform01).unwrap());
        }
        assert_eq!(xs, ys);
    }
}
