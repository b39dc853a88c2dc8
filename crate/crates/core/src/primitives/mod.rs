//! Coordination primitives: registration, leader election and multi-resource
//! mutual exclusion.
//!
//! Every primitive is a pure per-process state machine. Inputs are method
//! calls (API invocations, message deliveries, timer fires) and outputs are
//! [`Action`]s which the world executes: sending messages, arming timers and
//! publishing gvh slots.

pub mod election;
pub mod mutex;
pub mod registration;
pub mod timing;
pub mod wire;

use crate::gvh::Value;
use crate::net::Region;
use crate::types::{Pid, ZoneName};

pub use election::{Election, ElectionAlgorithm, ElectionError};
pub use mutex::{Mutex, MutexError, MutexFault};
pub use registration::{RegError, RegPhase, Registration};
pub use timing::TimingParams;
pub use wire::{Stamp, Wire};

/// Timer tags. Generations and rounds let a primitive ignore timers armed for
/// a request it has since abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Timer {
    MutexRetransmit { gen: u64 },
    MutexProgress { gen: u64 },
    RegJoin { gen: u64 },
    RegPhase { gen: u64 },
    ElectTimeout { round: u32 },
    ElectDeadline { round: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Unicast {
        dst: Pid,
        msg: Wire,
    },
    Geocast {
        msg: Wire,
        region: Region,
        d: u64,
    },
    Timer {
        after: u64,
        timer: Timer,
    },
    Publish {
        instance: &'static str,
        field: &'static str,
        value: Value,
    },
    /// Internal protocol step worth recording in the trace.
    Note {
        instance: &'static str,
        op: &'static str,
        zones: Vec<ZoneName>,
        pids: Vec<Pid>,
    },
}
