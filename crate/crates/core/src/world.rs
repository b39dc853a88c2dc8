//! The simulated world: robots with their primitives and applications, the
//! network, the physical plane and the online monitor, driven by the engine.

use std::collections::BTreeMap;

use crate::engine::{Engine, Event, EventKind, Flow, Model, Scheduler, Stop, StepOutcome, StopReason};
use crate::gvh::{Gvh, SlotKey, Value};
use crate::icp::{icp_step, path, Effect, IcpState, IcpView, Loc};
use crate::monitor::{MonitorState, Violation};
use crate::net::{NetEvent, NetNotice, Network, Region};
use crate::physics::{heading_towards, MotionFlag, Physics, Pose};
use crate::primitives::{
    Action, Election, Mutex, Registration, Timer, TimingParams, Wire,
};
use crate::scenario::{BehaviorSpec, Scenario, ScenarioError};
use crate::trace::{RecordBody, Trace, TraceHeader};
use crate::types::{Actor, Pid, Point, SimTime, ZoneName, ZoneSet};

pub const STREAM_STRESS: &str = "app.stress";
pub const STREAM_BALLOT: &str = "election.ballot";

const SLOTS: [(&str, &str); 12] = [
    ("mux", "crit"),
    ("mux", "failed"),
    ("mux", "crit_set"),
    ("mux", "request"),
    ("reg", "rList"),
    ("reg", "ts"),
    ("elect", "leader"),
    ("elect", "failed"),
    ("motion", "target"),
    ("motion", "avoid"),
    ("motion", "inMotion"),
    ("geo", "gcastflag"),
];

#[derive(Debug, Clone)]
pub enum Payload {
    Net(NetEvent),
    Prim(Timer),
}

impl From<NetEvent> for Payload {
    fn from(e: NetEvent) -> Self {
        Payload::Net(e)
    }
}

#[derive(Debug, Clone)]
pub enum Behavior {
    Icp { route: Vec<ZoneName> },
    Agent(BehaviorSpec),
}

/// Everything `install` needs to bring a robot to life.
#[derive(Debug, Clone)]
pub struct SpawnSpec {
    pub pose: Pose,
    pub start_at: SimTime,
    pub behavior: Behavior,
}

#[derive(Debug, Clone)]
enum StressPhase {
    Thinking { until: SimTime },
    Waiting,
    Holding { until: SimTime, order: Vec<ZoneName> },
}

#[derive(Debug, Clone)]
struct StressApp {
    zones: Vec<ZoneName>,
    remaining: u32,
    max_zones: usize,
    hold_ms: u64,
    think_ms: u64,
    plist: Vec<Pid>,
    phase: StressPhase,
}

#[derive(Debug, Clone)]
enum App {
    Icp(IcpState),
    Stress(StressApp),
    Probe { region: Region, left: u32, period: u64, next_at: SimTime, seq: u64 },
    Register { leave_at: Option<SimTime>, started: bool },
    Election { started: bool },
    Idle,
}

impl App {
    fn role(&self) -> &'static str {
        match self {
            App::Icp(_) => "icp",
            App::Stress(_) => "stress",
            App::Probe { .. } => "geocast_probe",
            App::Register { .. } => "register",
            App::Election { .. } => "election",
            App::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone)]
struct Proc {
    gvh: Gvh,
    mux: Mutex,
    reg: Registration,
    elect: Election,
    app: App,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub monitor: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { monitor: true }
    }
}

pub struct World {
    scenario: Scenario,
    timing: TimingParams,
    net: Network,
    physics: Physics,
    procs: BTreeMap<Pid, Proc>,
    monitor: Option<MonitorState>,
    cursor: usize,
    violations: Vec<Violation>,
    tick_pending: bool,
    halt: Option<String>,
    collided: bool,
}

impl World {
    pub fn new(scenario: &Scenario, opts: RunOptions) -> Self {
        World {
            timing: scenario.timing(),
            net: Network::new(scenario.net.clone()),
            physics: Physics::new(scenario.kinematics.clone()),
            procs: BTreeMap::new(),
            monitor: opts
                .monitor
                .then(|| MonitorState::new(scenario.geometry.clone())),
            cursor: 0,
            violations: Vec::new(),
            tick_pending: false,
            halt: None,
            collided: false,
            scenario: scenario.clone(),
        }
    }

    pub fn loc(&self, pid: Pid) -> Option<Loc> {
        match &self.procs.get(&pid)?.app {
            App::Icp(st) => Some(st.loc),
            _ => None,
        }
    }

    pub fn mutex(&self, pid: Pid) -> Option<&Mutex> {
        self.procs.get(&pid).map(|p| &p.mux)
    }

    pub fn registration(&self, pid: Pid) -> Option<&Registration> {
        self.procs.get(&pid).map(|p| &p.reg)
    }

    pub fn election(&self, pid: Pid) -> Option<&Election> {
        self.procs.get(&pid).map(|p| &p.elect)
    }

    pub fn physics(&self) -> &Physics {
        &self.physics
    }

    fn origin(&self, pid: Pid) -> Point {
        self.physics.position(pid).unwrap_or_default()
    }

    fn publish(&mut self, sched: &mut Scheduler<Payload>, pid: Pid, instance: &str, field: &str, value: Value) {
        let Some(p) = self.procs.get_mut(&pid) else { return };
        let key = SlotKey::new(instance, field);
        let version = p.gvh.publish(instance, &key, value.clone()).expect("slot registered at install");
        sched.emit(
            Actor::Process(pid),
            RecordBody::GvhPublish {
                key,
                value,
                version,
                writer: instance.to_string(),
            },
        );
    }

    fn invoke(
        sched: &mut Scheduler<Payload>,
        pid: Pid,
        primitive: &str,
        op: &str,
        zones: Vec<ZoneName>,
        pids: Vec<Pid>,
    ) {
        sched.emit(
            Actor::Process(pid),
            RecordBody::Invoke {
                primitive: primitive.into(),
                op: op.into(),
                zones,
                pids,
            },
        );
    }

    fn apply(&mut self, sched: &mut Scheduler<Payload>, pid: Pid, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Unicast { dst, msg } => {
                    let origin = self.origin(pid);
                    let _ = self.net.unicast(sched, pid, origin, dst, msg);
                }
                Action::Geocast { msg, region, d } => {
                    let origin = self.origin(pid);
                    let receivers: Vec<Pid> = self.procs.keys().copied().collect();
                    let _ = self.net.geocast_send(sched, pid, origin, msg, region, d, receivers);
                }
                Action::Timer { after, timer } => {
                    sched.schedule_in(after, Actor::Process(pid), EventKind::TimerFire(Payload::Prim(timer)));
                }
                Action::Publish { instance, field, value } => self.publish(sched, pid, instance, field, value),
                Action::Note {
                    instance,
                    op,
                    zones,
                    pids,
                } => Self::invoke(sched, pid, instance, op, zones, pids),
            }
        }
    }

    fn ensure_tick(&mut self, sched: &mut Scheduler<Payload>) {
        if self.tick_pending {
            return;
        }
        let tp = self.physics.kin.tick_period_ms;
        let next = (sched.now().ms() / tp + 1) * tp;
        sched
            .schedule(SimTime(next), Actor::World, EventKind::MotionTick)
            .expect("next tick is in the future");
        self.tick_pending = true;
    }

    fn move_to(&mut self, sched: &mut Scheduler<Payload>, pid: Pid, target: Point, avoid: Option<Region>) {
        let res = self.physics.do_move(pid, target, avoid, sched.now());
        Self::invoke(sched, pid, "motion", "do_move", Vec::new(), Vec::new());
        self.publish(sched, pid, "motion", "target", Value::Point(target));
        self.publish(sched, pid, "motion", "avoid", avoid.map(Value::Region).unwrap_or(Value::Null));
        match res {
            Ok(()) => {
                self.publish(sched, pid, "motion", "inMotion", Value::Bool(true));
                self.ensure_tick(sched);
            }
            Err(_) => self.publish(sched, pid, "motion", "inMotion", Value::Bool(false)),
        }
    }

    fn motion_tick(&mut self, sched: &mut Scheduler<Payload>) {
        self.tick_pending = false;
        let now = sched.now();
        let moving: Vec<Pid> = self
            .physics
            .bodies()
            .filter(|(_, b)| !b.frozen && b.motion.flag == MotionFlag::InMotion)
            .map(|(p, _)| p)
            .collect();
        for pid in moving {
            let last = self.physics.body(pid).expect("listed").last_update;
            let changed = self.physics.step_motion(pid, now.saturating_sub(last), now);
            if changed {
                let b = self.physics.body(pid).expect("listed");
                let (pose, flag) = (b.pose, b.motion.flag);
                sched.emit(
                    Actor::Process(pid),
                    RecordBody::MotionTick {
                        x: pose.x,
                        y: pose.y,
                        heading: pose.heading,
                        flag,
                    },
                );
                if flag != MotionFlag::InMotion {
                    self.publish(sched, pid, "motion", "inMotion", Value::Bool(false));
                }
            }
        }
        self.check_collisions(sched);
        if self.physics.any_in_motion() {
            self.ensure_tick(sched);
        }
    }

    fn check_collisions(&mut self, sched: &mut Scheduler<Payload>) {
        let pairs = self.physics.detect_collisions();
        if !pairs.is_empty() && !self.collided {
            self.collided = true;
            sched.emit(Actor::World, RecordBody::Collision { pairs });
            self.halt = Some("collision".into());
        }
    }

    fn deliver(&mut self, sched: &mut Scheduler<Payload>, dst: Pid, src: Pid, payload: Wire) {
        let now = sched.now();
        let Some(p) = self.procs.get_mut(&dst) else { return };
        let actions = match &payload {
            Wire::Request { .. } | Wire::Ok { .. } | Wire::ReleaseNotify { .. } => p.mux.on_message(src, &payload),
            Wire::Join { .. } | Wire::Echo { .. } | Wire::Leave { .. } => p.reg.on_message(src, &payload, now),
            Wire::Elect { .. } | Wire::Coord { .. } => p.elect.on_message(src, &payload),
            Wire::Ack { .. } | Wire::Beacon { .. } => Vec::new(),
        };
        self.apply(sched, dst, actions);
    }

    fn on_timer(&mut self, sched: &mut Scheduler<Payload>, pid: Pid, t: Timer) {
        let now = sched.now();
        let Some(p) = self.procs.get_mut(&pid) else { return };
        let actions = match t {
            Timer::MutexRetransmit { .. } | Timer::MutexProgress { .. } => p.mux.on_timer(t),
            Timer::RegJoin { .. } | Timer::RegPhase { .. } => p.reg.on_timer(t, now),
            Timer::ElectTimeout { .. } | Timer::ElectDeadline { .. } => p.elect.on_timer(t),
        };
        self.apply(sched, pid, actions);
    }

    fn step_icp(&mut self, sched: &mut Scheduler<Payload>, pid: Pid) -> StepOutcome {
        let geom = &self.scenario.geometry;
        let p = self.procs.get_mut(&pid).expect("installed");
        let App::Icp(st) = &mut p.app else { unreachable!() };
        let view = IcpView {
            rlist: p.gvh.value("reg", "rList").as_pids().map(|v| v.to_vec()),
            crit: p.gvh.value("mux", "crit").as_bool().unwrap_or(false),
            mux_failed: p.gvh.value("mux", "failed").as_bool().unwrap_or(false),
            crit_set: p
                .gvh
                .value("mux", "crit_set")
                .as_zones()
                .map(|z| z.iter().cloned().collect())
                .unwrap_or_default(),
            motion: self.physics.body(pid).map(|b| b.motion.flag),
        };
        let before = (st.loc, st.myseq.len());
        let from = st.loc;
        let effects = icp_step(st, &view, geom);
        let after = (st.loc, st.myseq.len());
        let (to, myseq) = (st.loc, st.myseq.clone());
        for fx in effects {
            self.effect(sched, pid, fx);
        }
        if before != after {
            sched.emit(
                Actor::Process(pid),
                RecordBody::AppLoc {
                    from: from.label().into(),
                    to: to.label().into(),
                    myseq,
                },
            );
        }
        match to {
            Loc::Done => {
                sched.emit(Actor::Process(pid), RecordBody::Done);
                self.physics.remove_body(pid);
                StepOutcome::Done
            }
            Loc::Stuck => StepOutcome::Done,
            _ => StepOutcome::Continue,
        }
    }

    fn effect(&mut self, sched: &mut Scheduler<Payload>, pid: Pid, fx: Effect) {
        let now = sched.now();
        match fx {
            Effect::Register => {
                Self::invoke(sched, pid, "reg", "do_register", Vec::new(), Vec::new());
                let p = self.procs.get_mut(&pid).expect("installed");
                if let Ok(a) = p.reg.do_register(now) {
                    self.apply(sched, pid, a);
                }
            }
            Effect::Mutex { zones, plist } => self.request(sched, pid, zones, plist),
            Effect::MoveTo(zone) => {
                if let Some(c) = self.scenario.geometry.center(&zone) {
                    self.move_to(sched, pid, c, None);
                }
            }
            Effect::Release(zones) => self.release(sched, pid, zones),
            Effect::Unregister => {
                Self::invoke(sched, pid, "reg", "unregister", Vec::new(), Vec::new());
                let p = self.procs.get_mut(&pid).expect("installed");
                if let Ok(a) = p.reg.unregister() {
                    self.apply(sched, pid, a);
                }
            }
            Effect::StopMotion => self.physics.stop(pid),
            Effect::Stuck(reason) => sched.emit(Actor::Process(pid), RecordBody::Stuck { reason }),
        }
    }

    fn request(&mut self, sched: &mut Scheduler<Payload>, pid: Pid, zones: ZoneSet, plist: Vec<Pid>) {
        Self::invoke(sched, pid, "mux", "do_mutex", zones.iter().cloned().collect(), plist.clone());
        let p = self.procs.get_mut(&pid).expect("installed");
        match p.mux.do_mutex(zones, &plist) {
            Ok(a) => self.apply(sched, pid, a),
            Err(e) => sched.emit(Actor::Process(pid), RecordBody::Stuck { reason: e.to_string() }),
        }
    }

    fn release(&mut self, sched: &mut Scheduler<Payload>, pid: Pid, zones: ZoneSet) {
        Self::invoke(sched, pid, "mux", "release", zones.iter().cloned().collect(), Vec::new());
        let p = self.procs.get_mut(&pid).expect("installed");
        if let Ok(a) = p.mux.release(&zones) {
            self.apply(sched, pid, a);
        }
    }

    fn step_stress(&mut self, sched: &mut Scheduler<Payload>, pid: Pid) -> StepOutcome {
        let now = sched.now();
        let p = self.procs.get_mut(&pid).expect("installed");
        let crit = p.mux.crit();
        let failed = p.mux.failed() && p.mux.pending().is_none();
        let App::Stress(app) = &mut p.app else { unreachable!() };
        match app.phase.clone() {
            StressPhase::Thinking { until } => {
                if now < until {
                    return StepOutcome::Continue;
                }
                if app.remaining == 0 {
                    return StepOutcome::Done;
                }
                let n = app.zones.len();
                let k = sched.rng().range(STREAM_STRESS, 1, app.max_zones.min(n) as u64) as usize;
                let mut pool = app.zones.clone();
                let mut pick = ZoneSet::new();
                for _ in 0..k {
                    let i = sched.rng().range(STREAM_STRESS, 0, pool.len() as u64 - 1) as usize;
                    pick.insert(pool.swap_remove(i));
                }
                app.phase = StressPhase::Waiting;
                let plist = app.plist.clone();
                self.request(sched, pid, pick, plist);
            }
            StressPhase::Waiting => {
                if crit {
                    let hold = sched.rng().range(STREAM_STRESS, 0, app.hold_ms);
                    let order: Vec<ZoneName> = p.mux.crit_set().iter().cloned().collect();
                    let App::Stress(app) = &mut p.app else { unreachable!() };
                    app.phase = StressPhase::Holding {
                        until: now + hold,
                        order,
                    };
                } else if failed {
                    app.remaining = app.remaining.saturating_sub(1);
                    app.phase = StressPhase::Thinking { until: now };
                }
            }
            StressPhase::Holding { until, mut order } => {
                if now < until {
                    return StepOutcome::Continue;
                }
                // give zones back one at a time, each after its own hold
                let z = order.remove(0);
                if order.is_empty() {
                    let think = sched.rng().range(STREAM_STRESS, 0, app.think_ms);
                    app.remaining -= 1;
                    app.phase = StressPhase::Thinking { until: now + think };
                } else {
                    let hold = sched.rng().range(STREAM_STRESS, 0, app.hold_ms);
                    app.phase = StressPhase::Holding { until: now + hold, order };
                }
                self.release(sched, pid, std::iter::once(z).collect());
            }
        }
        StepOutcome::Continue
    }

    fn step_agent(&mut self, sched: &mut Scheduler<Payload>, pid: Pid) -> StepOutcome {
        let now = sched.now();
        let p = self.procs.get_mut(&pid).expect("installed");
        match &mut p.app {
            App::Icp(_) => self.step_icp(sched, pid),
            App::Stress(_) => self.step_stress(sched, pid),
            App::Idle => StepOutcome::Done,
            App::Probe {
                region,
                left,
                period,
                next_at,
                seq,
            } => {
                if *left == 0 {
                    return StepOutcome::Done;
                }
                if now < *next_at {
                    return StepOutcome::Continue;
                }
                *left -= 1;
                *seq += 1;
                *next_at = now + *period;
                let action = Action::Geocast {
                    msg: Wire::Beacon { seq: *seq },
                    region: *region,
                    d: self.timing.d,
                };
                Self::invoke(sched, pid, "geo", "do_geocast", Vec::new(), Vec::new());
                self.apply(sched, pid, vec![action]);
                StepOutcome::Continue
            }
            App::Register { leave_at, started } => {
                if !*started {
                    *started = true;
                    let leave = *leave_at;
                    Self::invoke(sched, pid, "reg", "do_register", Vec::new(), Vec::new());
                    let a = p.reg.do_register(now).expect("fresh registration");
                    self.apply(sched, pid, a);
                    return if leave.is_some() {
                        StepOutcome::Continue
                    } else {
                        StepOutcome::Done
                    };
                }
                if leave_at.is_some_and(|t| now >= t) {
                    if let Ok(a) = p.reg.unregister() {
                        Self::invoke(sched, pid, "reg", "unregister", Vec::new(), Vec::new());
                        self.apply(sched, pid, a);
                        return StepOutcome::Done;
                    }
                }
                StepOutcome::Continue
            }
            App::Election { started } => {
                if !*started {
                    *started = true;
                    let plist: Vec<Pid> = self
                        .procs
                        .iter()
                        .filter(|(_, q)| matches!(q.app, App::Election { .. }))
                        .map(|(p, _)| *p)
                        .collect();
                    let ballot = sched.rng().range(STREAM_BALLOT, 0, 1_000_000);
                    Self::invoke(sched, pid, "elect", "do_election", Vec::new(), plist.clone());
                    let p = self.procs.get_mut(&pid).expect("installed");
                    if let Ok(a) = p.elect.do_election(&plist, ballot) {
                        self.apply(sched, pid, a);
                    }
                }
                StepOutcome::Done
            }
        }
    }
}

impl Model for World {
    type Payload = Payload;
    type Behavior = SpawnSpec;

    fn install(&mut self, pid: Pid, spec: SpawnSpec, sched: &mut Scheduler<Payload>) {
        let t = self.timing;
        let sc = &self.scenario;
        let mut gvh = Gvh::new();
        for (inst, field) in SLOTS {
            gvh.register_slot(inst, SlotKey::new(inst, field)).expect("fresh gvh");
        }
        let route = match &spec.behavior {
            Behavior::Icp { route } => route.clone(),
            _ => Vec::new(),
        };
        let stress_group: Vec<Pid> = sc
            .agents
            .iter()
            .filter(|a| matches!(a.behavior, BehaviorSpec::Stress { .. }))
            .map(|a| a.pid)
            .collect();
        let app = match spec.behavior {
            Behavior::Icp { route } => App::Icp(IcpState::new(pid, sc.xid, route)),
            Behavior::Agent(b) => match b {
                BehaviorSpec::Idle => App::Idle,
                BehaviorSpec::Stress {
                    zones,
                    requests,
                    max_zones,
                    hold_ms,
                    think_ms,
                } => App::Stress(StressApp {
                    zones,
                    remaining: requests,
                    max_zones,
                    hold_ms,
                    think_ms,
                    plist: stress_group,
                    phase: StressPhase::Thinking { until: spec.start_at },
                }),
                BehaviorSpec::GeocastProbe {
                    region,
                    count,
                    period_ms,
                } => App::Probe {
                    region,
                    left: count,
                    period: period_ms,
                    next_at: spec.start_at,
                    seq: 0,
                },
                BehaviorSpec::Register { leave_at } => App::Register {
                    leave_at,
                    started: false,
                },
                BehaviorSpec::Election => App::Election { started: false },
            },
        };
        sched.emit(
            Actor::Process(pid),
            RecordBody::Spawn {
                start_at: spec.start_at,
                x: spec.pose.x,
                y: spec.pose.y,
                heading: spec.pose.heading,
                role: app.role().into(),
                route,
            },
        );
        self.physics.add_body(pid, spec.pose, sched.now());
        let proc = Proc {
            gvh,
            mux: Mutex::new(pid, sc.xid, t.mutex_rto, t.d2).with_fault(sc.faults.mutex),
            reg: Registration::new(pid, sc.xid, sc.registration_region, t),
            elect: Election::new(pid, sc.election, 2 * t.d, t.d2),
            app,
        };
        self.procs.insert(pid, proc);
    }

    fn app_step(&mut self, pid: Pid, sched: &mut Scheduler<Payload>) -> StepOutcome {
        self.step_agent(sched, pid)
    }

    fn handle(&mut self, event: Event<Payload>, sched: &mut Scheduler<Payload>) {
        match (event.kind, event.target) {
            (EventKind::MotionTick, _) => self.motion_tick(sched),
            (EventKind::MessageDelivery(Payload::Net(ne)) | EventKind::TimerFire(Payload::Net(ne)), _) => {
                let physics = &self.physics;
                let notices = self.net.handle(sched, ne, |p| physics.position(p));
                for n in notices {
                    match n {
                        NetNotice::Delivered { dst, src, payload, .. } => self.deliver(sched, dst, src, payload),
                        NetNotice::GeocastComplete { src, .. } => {
                            self.publish(sched, src, "geo", "gcastflag", Value::Bool(true))
                        }
                    }
                }
            }
            (EventKind::TimerFire(Payload::Prim(t)), Actor::Process(pid)) => {
                if !sched.is_crashed(pid) {
                    self.on_timer(sched, pid, t);
                }
            }
            _ => {}
        }
    }

    fn on_crash(&mut self, pid: Pid, _sched: &mut Scheduler<Payload>) {
        self.physics.freeze(pid);
    }

    fn checkpoint(&mut self, sched: &mut Scheduler<Payload>) -> Flow {
        if let Some(m) = self.monitor.as_mut() {
            for r in &sched.trace()[self.cursor..] {
                if r.body.kind() != "violation" {
                    m.observe(r);
                }
            }
            let fresh = m.check(sched.now());
            for v in &fresh {
                sched.emit(Actor::World, RecordBody::Violation(v.clone()));
            }
            self.cursor = sched.trace().len();
            let halt = !fresh.is_empty() && self.scenario.monitor.halt_on_violation;
            if let Some(v) = fresh.first().filter(|_| halt) {
                self.halt.get_or_insert_with(|| format!("violation: {}", v.property.label()));
            }
            self.violations.extend(fresh);
        }
        match self.halt.take() {
            Some(why) => Flow::Halt(why),
            None => Flow::Continue,
        }
    }
}

/// Result of one simulation run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub stop: StopReason,
    /// Online monitor findings (empty when the monitor is off).
    pub violations: Vec<Violation>,
    pub final_locs: BTreeMap<Pid, Loc>,
    pub collision: bool,
}

impl RunOutput {
    pub fn all_vehicles_done(&self) -> bool {
        self.final_locs.values().all(|l| *l == Loc::Done)
    }

    pub fn stuck(&self) -> Vec<Pid> {
        self.final_locs
            .iter()
            .filter(|(_, l)| **l == Loc::Stuck)
            .map(|(p, _)| *p)
            .collect()
    }

    /// Clean run: no violation, no collision and every vehicle departed.
    pub fn success(&self) -> bool {
        self.violations.is_empty() && !self.collision && self.all_vehicles_done()
    }
}

pub fn build_engine(sc: &Scenario, opts: RunOptions) -> Result<Engine<World>, ScenarioError> {
    sc.validate()?;
    let world = World::new(sc, opts);
    let mut eng = Engine::new(world, sc.master_seed)
        .with_step_period(sc.step_period_ms)
        .with_horizon(SimTime(sc.max_time_ms));
    let geom = &sc.geometry;
    let mk_err = |field: String, e: String| ScenarioError::Validation { field, msg: e };
    for (i, v) in sc.vehicles.iter().enumerate() {
        let route = path(geom, &v.arrival, &v.departure).map_err(|e| mk_err(format!("vehicles[{i}]"), e.to_string()))?;
        let start = geom.center(&route[0]).expect("validated");
        let next = geom.center(&route[1]).expect("validated");
        let spec = SpawnSpec {
            pose: Pose::new(start.x, start.y, heading_towards(start, next)),
            start_at: v.start_at,
            behavior: Behavior::Icp { route },
        };
        eng.spawn_process(v.pid, spec, v.start_at)
            .map_err(|e| mk_err(format!("vehicles[{i}]"), e.to_string()))?;
    }
    for (i, a) in sc.agents.iter().enumerate() {
        let spec = SpawnSpec {
            pose: Pose::new(a.x, a.y, 0.0),
            start_at: a.start_at,
            behavior: Behavior::Agent(a.behavior.clone()),
        };
        eng.spawn_process(a.pid, spec, a.start_at)
            .map_err(|e| mk_err(format!("agents[{i}]"), e.to_string()))?;
    }
    for (i, c) in sc.net.crash_schedule.iter().enumerate() {
        eng.sched
            .schedule_crash(c.pid, c.at)
            .map_err(|e| mk_err(format!("net.crash_schedule[{i}]"), e.to_string()))?;
    }
    let Engine { sched, model, .. } = &mut eng;
    model.check_collisions(sched);
    Ok(eng)
}

/// Runs `sc` to completion (every process terminal and no events left) or to
/// `max_time_ms`, whichever comes first.
pub fn run_scenario(sc: &Scenario, opts: RunOptions) -> Result<RunOutput, ScenarioError> {
    let mut eng = build_engine(sc, opts)?;
    let stop = eng.run(Stop::AllDone);
    let (world, records) = eng.into_parts();
    let final_locs = world
        .procs
        .iter()
        .filter_map(|(p, pr)| match &pr.app {
            App::Icp(st) => Some((*p, st.loc)),
            _ => None,
        })
        .collect();
    Ok(RunOutput {
        trace: Trace {
            header: TraceHeader::new(sc),
            records,
        },
        stop,
        violations: world.violations,
        final_locs,
        collision: world.collided,
    })
}
