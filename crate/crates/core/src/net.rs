//! Simulated wireless network.
//!
//! Unicast messages get one delivery attempt each; losing them is the
//! sender's problem. Geocasts are replicated toward every live process and
//! retransmitted every `retx_period` to receivers that have not acknowledged,
//! until the deadline `sent_at + d`. Whether a geocast copy is accepted is
//! decided at the receiver, from its position at the moment of the attempt.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Distribution, EventKind, Scheduler};
use crate::primitives::wire::Wire;
use crate::trace::{DropReason, RecordBody};
use crate::types::{Actor, Pid, Point, SimTime};

pub const STREAM_DELAY: &str = "net.delay";
pub const STREAM_LOSS: &str = "net.loss";

/// Exponential delays are truncated at this multiple of the mean.
pub const EXP_TRUNCATION: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Disc { center: Point, radius: f64 },
    Everywhere,
}

impl Region {
    pub fn disc(x: f64, y: f64, radius: f64) -> Self {
        Region::Disc {
            center: Point::new(x, y),
            radius,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        match self {
            Region::Everywhere => true,
            Region::Disc { center, radius } => center.dist(p) <= *radius,
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Region::Everywhere => true,
            Region::Disc { center, radius } => center.is_finite() && *radius > 0.0 && radius.is_finite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayDistribution {
    Constant,
    Uniform {
        lo: u64,
        hi: u64,
    },
    #[default]
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrashSpec {
    pub pid: Pid,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "default_mean_delay")]
    pub mean_delay: u64,
    #[serde(default)]
    pub delay_distribution: DelayDistribution,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default)]
    pub crash_schedule: Vec<CrashSpec>,
}

fn default_mean_delay() -> u64 {
    100
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            mean_delay: 100,
            delay_distribution: DelayDistribution::Exponential,
            loss_rate: 0.0,
            crash_schedule: Vec::new(),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(format!("net.loss_rate must lie in [0,1], got {}", self.loss_rate));
        }
        if let DelayDistribution::Uniform { lo, hi } = self.delay_distribution {
            if lo > hi {
                return Err(format!("net.delay_distribution: lo {lo} > hi {hi}"));
            }
        }
        Ok(())
    }

    pub fn retx_period(&self) -> u64 {
        (self.mean_delay / 2).max(1)
    }

    /// Largest delay a single attempt can experience.
    pub fn max_delay(&self) -> u64 {
        match self.delay_distribution {
            DelayDistribution::Constant => self.mean_delay,
            DelayDistribution::Uniform { hi, .. } => hi,
            DelayDistribution::Exponential => self.mean_delay * EXP_TRUNCATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MessageMode {
    Unicast { dst: Pid },
    Geocast { region: Region, deadline: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub msg_id: u64,
    pub src: Pid,
    pub origin_pos: Point,
    pub payload: Wire,
    pub sent_at: SimTime,
    pub mode: MessageMode,
}

/// Receiver-side geocast filter. Unicast messages are always deliverable.
pub fn deliverable(m: &Message, receiver_pos: Point) -> bool {
    match m.mode {
        MessageMode::Unicast { .. } => true,
        MessageMode::Geocast { region, .. } => region.contains(receiver_pos),
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("sender {0} has crashed")]
    SenderCrashed(Pid),
    #[error("unknown process {0}")]
    UnknownPid(Pid),
}

/// Events the network schedules for itself.
#[derive(Debug, Clone, PartialEq)]
pub enum NetEvent {
    Deliver { msg_id: u64, dst: Pid },
    Retransmit { msg_id: u64 },
    Deadline { msg_id: u64 },
}

/// Things the surrounding world must act on.
#[derive(Debug, Clone, PartialEq)]
pub enum NetNotice {
    Delivered { dst: Pid, src: Pid, msg_id: u64, payload: Wire },
    GeocastComplete { src: Pid, msg_id: u64 },
}

#[derive(Debug, Clone)]
struct Family {
    msg: Message,
    receivers: BTreeSet<Pid>,
    delivered: BTreeSet<Pid>,
    acked: BTreeSet<Pid>,
    in_flight: u32,
    complete: bool,
}

#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetConfig,
    next_id: u64,
    families: BTreeMap<u64, Family>,
}

impl Network {
    pub fn new(cfg: NetConfig) -> Self {
        Network {
            cfg,
            next_id: 0,
            families: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Number of message families still tracked.
    pub fn live_families(&self) -> usize {
        self.families.len()
    }

    fn sample_delay<P>(&self, sched: &mut Scheduler<P>) -> u64 {
        let mean = self.cfg.mean_delay;
        match self.cfg.delay_distribution {
            DelayDistribution::Constant => mean,
            DelayDistribution::Uniform { lo, hi } => {
                let u = sched
                    .draw(STREAM_DELAY, Distribution::Uniform01)
                    .expect("uniform draw");
                lo + (u * (hi - lo) as f64).round() as u64
            }
            DelayDistribution::Exponential => {
                if mean == 0 {
                    return 0;
                }
                let x = sched
                    .draw(STREAM_DELAY, Distribution::Exponential { mean: mean as f64 })
                    .expect("mean > 0");
                (x.round() as u64).min(mean * EXP_TRUNCATION)
            }
        }
    }

    fn lost<P>(&self, sched: &mut Scheduler<P>) -> bool {
        if self.cfg.loss_rate <= 0.0 {
            return false;
        }
        sched
            .draw(STREAM_LOSS, Distribution::Bernoulli { p: self.cfg.loss_rate })
            .expect("validated loss rate")
            == 1.0
    }

    fn attempt<P: From<NetEvent>>(&mut self, sched: &mut Scheduler<P>, msg_id: u64, dst: Pid) {
        let src = self.families[&msg_id].msg.src;
        if self.lost(sched) {
            sched.emit(
                Actor::Process(src),
                RecordBody::MsgDrop {
                    msg_id,
                    dst,
                    reason: DropReason::Loss,
                },
            );
            return;
        }
        let delay = self.sample_delay(sched);
        self.families.get_mut(&msg_id).expect("family").in_flight += 1;
        sched.schedule_in(
            delay,
            Actor::Process(dst),
            EventKind::MessageDelivery(NetEvent::Deliver { msg_id, dst }.into()),
        );
    }

    fn open(&mut self, sched_now: SimTime, src: Pid, origin: Point, payload: Wire, mode: MessageMode) -> u64 {
        let msg_id = self.next_id;
        self.next_id += 1;
        self.families.insert(
            msg_id,
            Family {
                msg: Message {
                    msg_id,
                    src,
                    origin_pos: origin,
                    payload,
                    sent_at: sched_now,
                    mode,
                },
                receivers: BTreeSet::new(),
                delivered: BTreeSet::new(),
                acked: BTreeSet::new(),
                in_flight: 0,
                complete: false,
            },
        );
        msg_id
    }

    pub fn unicast<P: From<NetEvent>>(
        &mut self,
        sched: &mut Scheduler<P>,
        src: Pid,
        origin: Point,
        dst: Pid,
        payload: Wire,
    ) -> Result<u64, NetError> {
        if sched.is_crashed(src) {
            return Err(NetError::SenderCrashed(src));
        }
        let mode = MessageMode::Unicast { dst };
        let msg_id = self.open(sched.now(), src, origin, payload.clone(), mode);
        self.families.get_mut(&msg_id).unwrap().receivers.insert(dst);
        sched.emit(
            Actor::Process(src),
            RecordBody::MsgSend {
                msg_id,
                attempt: 0,
                mode,
                payload,
                dsts: vec![dst],
            },
        );
        self.attempt(sched, msg_id, dst);
        self.gc(msg_id, sched.now());
        Ok(msg_id)
    }

    /// Starts a geocast of `payload` over `region` with window `d`, replicated
    /// toward every process in `receivers` other than `src`.
    pub fn geocast_send<P: From<NetEvent>>(
        &mut self,
        sched: &mut Scheduler<P>,
        src: Pid,
        origin: Point,
        payload: Wire,
        region: Region,
        d: u64,
        receivers: impl IntoIterator<Item = Pid>,
    ) -> Result<u64, NetError> {
        if sched.is_crashed(src) {
            return Err(NetError::SenderCrashed(src));
        }
        let mode = MessageMode::Geocast { region, deadline: d };
        let msg_id = self.open(sched.now(), src, origin, payload.clone(), mode);
        let targets: BTreeSet<Pid> = receivers
            .into_iter()
            .filter(|p| *p != src && !sched.is_crashed(*p))
            .collect();
        self.families.get_mut(&msg_id).unwrap().receivers = targets.clone();
        sched.emit(
            Actor::Process(src),
            RecordBody::MsgSend {
                msg_id,
                attempt: 0,
                mode,
                payload,
                dsts: targets.iter().copied().collect(),
            },
        );
        for dst in &targets {
            self.attempt(sched, msg_id, *dst);
        }
        let retx = self.cfg.retx_period();
        if retx < d {
            sched.schedule_in(
                retx,
                Actor::Process(src),
                EventKind::TimerFire(NetEvent::Retransmit { msg_id }.into()),
            );
        }
        sched.schedule_in(
            d,
            Actor::Process(src),
            EventKind::TimerFire(NetEvent::Deadline { msg_id }.into()),
        );
        Ok(msg_id)
    }

    /// Processes a network event. `position` reports where a process is now.
    pub fn handle<P: From<NetEvent>>(
        &mut self,
        sched: &mut Scheduler<P>,
        event: NetEvent,
        position: impl Fn(Pid) -> Option<Point>,
    ) -> Vec<NetNotice> {
        match event {
            NetEvent::Deliver { msg_id, dst } => self.on_deliver(sched, msg_id, dst, position),
            NetEvent::Retransmit { msg_id } => {
                self.on_retransmit(sched, msg_id);
                Vec::new()
            }
            NetEvent::Deadline { msg_id } => self.on_deadline(sched, msg_id),
        }
    }

    fn on_deliver<P: From<NetEvent>>(
        &mut self,
        sched: &mut Scheduler<P>,
        msg_id: u64,
        dst: Pid,
        position: impl Fn(Pid) -> Option<Point>,
    ) -> Vec<NetNotice> {
        let now = sched.now();
        let Some(fam) = self.families.get_mut(&msg_id) else {
            return Vec::new();
        };
        fam.in_flight = fam.in_flight.saturating_sub(1);
        let src = fam.msg.src;
        let mode = fam.msg.mode;
        let sent_at = fam.msg.sent_at;
        let payload = fam.msg.payload.clone();
        let already = fam.delivered.contains(&dst);
        let in_region = deliverable(&fam.msg, position(dst).unwrap_or(Point::new(f64::NAN, f64::NAN)));
        let log_drop = |sched: &mut Scheduler<P>, reason| {
            sched.emit(Actor::Process(src), RecordBody::MsgDrop { msg_id, dst, reason });
        };
        let mut notices = Vec::new();
        if sched.is_crashed(dst) {
            log_drop(sched, DropReason::Crash);
        } else {
            match mode {
                MessageMode::Unicast { .. } => {
                    sched.emit(
                        Actor::Process(dst),
                        RecordBody::MsgDeliver {
                            msg_id,
                            src,
                            payload: payload.clone(),
                        },
                    );
                    self.families.get_mut(&msg_id).unwrap().delivered.insert(dst);
                    if let Wire::Ack { msg_id: acked } = payload {
                        notices.extend(self.on_ack(sched, acked, src));
                    } else {
                        notices.push(NetNotice::Delivered {
                            dst,
                            src,
                            msg_id,
                            payload,
                        });
                    }
                }
                MessageMode::Geocast { deadline, .. } => {
                    if now > sent_at + deadline {
                        log_drop(sched, DropReason::Expired);
                    } else if !in_region {
                        log_drop(sched, DropReason::Region);
                    } else if already {
                        log_drop(sched, DropReason::Duplicate);
                        self.send_ack(sched, dst, src, msg_id, &position);
                    } else {
                        self.families.get_mut(&msg_id).unwrap().delivered.insert(dst);
                        sched.emit(
                            Actor::Process(dst),
                            RecordBody::MsgDeliver {
                                msg_id,
                                src,
                                payload: payload.clone(),
                            },
                        );
                        notices.push(NetNotice::Delivered {
                            dst,
                            src,
                            msg_id,
                            payload,
                        });
                        self.send_ack(sched, dst, src, msg_id, &position);
                    }
                }
            }
        }
        self.gc(msg_id, now);
        notices
    }

    fn send_ack<P: From<NetEvent>>(
        &mut self,
        sched: &mut Scheduler<P>,
        from: Pid,
        to: Pid,
        msg_id: u64,
        position: &impl Fn(Pid) -> Option<Point>,
    ) {
        let origin = position(from).unwrap_or_default();
        // receiver is alive here, so this cannot fail
        let _ = self.unicast(sched, from, origin, to, Wire::Ack { msg_id });
    }

    fn on_ack<P>(&mut self, sched: &mut Scheduler<P>, msg_id: u64, from: Pid) -> Vec<NetNotice> {
        let Some(fam) = self.families.get_mut(&msg_id) else {
            return Vec::new();
        };
        fam.acked.insert(from);
        if fam.complete || sched.is_crashed(fam.msg.src) {
            return Vec::new();
        }
        let all = fam
            .receivers
            .iter()
            .filter(|p| !sched.is_crashed(**p))
            .all(|p| fam.acked.contains(p));
        if all {
            fam.complete = true;
            return vec![NetNotice::GeocastComplete {
                src: fam.msg.src,
                msg_id,
            }];
        }
        Vec::new()
    }

    fn on_retransmit<P: From<NetEvent>>(&mut self, sched: &mut Scheduler<P>, msg_id: u64) {
        let now = sched.now();
        let Some(fam) = self.families.get(&msg_id) else {
            return;
        };
        let src = fam.msg.src;
        let MessageMode::Geocast { deadline, .. } = fam.msg.mode else {
            return;
        };
        if fam.complete || sched.is_crashed(src) || now > fam.msg.sent_at + deadline {
            return;
        }
        let targets: Vec<Pid> = fam
            .receivers
            .iter()
            .copied()
            .filter(|p| !fam.acked.contains(p) && !sched.is_crashed(*p))
            .collect();
        if !targets.is_empty() {
            let attempt = ((now.ms() - fam.msg.sent_at.ms()) / self.cfg.retx_period()) as u32;
            sched.emit(
                Actor::Process(src),
                RecordBody::MsgSend {
                    msg_id,
                    attempt,
                    mode: fam.msg.mode,
                    payload: fam.msg.payload.clone(),
                    dsts: targets.clone(),
                },
            );
            for dst in targets {
                self.attempt(sched, msg_id, dst);
            }
        }
        let next = now + self.cfg.retx_period();
        if next < fam_deadline(&self.families[&msg_id]) {
            sched.schedule(
                next,
                Actor::Process(src),
                EventKind::TimerFire(NetEvent::Retransmit { msg_id }.into()),
            )
            .expect("future");
        }
    }

    fn on_deadline<P>(&mut self, sched: &mut Scheduler<P>, msg_id: u64) -> Vec<NetNotice> {
        let now = sched.now();
        let Some(fam) = self.families.get_mut(&msg_id) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if !fam.complete && !sched.is_crashed(fam.msg.src) {
            out.push(NetNotice::GeocastComplete {
                src: fam.msg.src,
                msg_id,
            });
        }
        fam.complete = true;
        self.gc(msg_id, now);
        out
    }

    fn gc(&mut self, msg_id: u64, now: SimTime) {
        let Some(fam) = self.families.get(&msg_id) else {
            return;
        };
        let finished = match fam.msg.mode {
            MessageMode::Unicast { .. } => fam.in_flight == 0,
            MessageMode::Geocast { .. } => fam.in_flight == 0 && now >= fam_deadline(fam),
        };
        if finished {
            self.families.remove(&msg_id);
        }
    }
}

fn fam_deadline(fam: &Family) -> SimTime {
    match fam.msg.mode {
        MessageMode::Geocast { deadline, .. } => fam.msg.sent_at + deadline,
        MessageMode::Unicast { .. } => fam.msg.sent_at,
    }
}
