//! Payloads carried inside network messages.

use serde::{Deserialize, Serialize};

use crate::types::{Pid, ZoneSet};

/// Lamport priority of a mutex request: `(clock, pid)`, compared
/// lexicographically. Smaller is higher priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stamp {
    pub clock: u64,
    pub pid: Pid,
}

impl Stamp {
    pub fn new(clock: u64, pid: Pid) -> Self {
        Stamp { clock, pid }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Wire {
    Request { xid: u32, zones: ZoneSet, stamp: Stamp },
    Ok { xid: u32, stamp: Stamp },
    ReleaseNotify { xid: u32, zones: ZoneSet },
    Join { xid: u32, pid: Pid },
    Echo { xid: u32, pids: Vec<Pid> },
    Leave { xid: u32, pid: Pid },
    Elect { round: u32, value: u64 },
    Coord { round: u32, leader: Pid },
    /// Geocast acknowledgement, consumed by the network layer.
    Ack { msg_id: u64 },
    /// Application-level probe used by geocast experiments.
    Beacon { seq: u64 },
}

impl Wire {
    pub fn label(&self) -> &'static str {
        match self {
            Wire::Request { .. } => "REQUEST",
            Wire::Ok { .. } => "OK",
            Wire::ReleaseNotify { .. } => "RELEASE-NOTIFY",
            Wire::Join { .. } => "JOIN",
            Wire::Echo { .. } => "ECHO",
            Wire::Leave { .. } => "LEAVE",
            Wire::Elect { .. } => "ELECT",
            Wire::Coord { .. } => "COORD",
            Wire::Ack { .. } => "ACK",
            Wire::Beacon { .. } => "BEACON",
        }
    }
}
