//! JSON-lines trace format.
//!
//! A trace file starts with one header line carrying the schema version and
//! the full scenario, followed by one [`TraceRecord`] per line in dispatch
//! order. `ev` is the index of the event whose dispatch produced the record
//! (0 for setup), which lets offline tools replay the exact checkpoints the
//! online monitor saw.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gvh::{SlotKey, Value};
use crate::monitor::Violation;
use crate::net::MessageMode;
use crate::physics::MotionFlag;
use crate::primitives::wire::Wire;
use crate::scenario::Scenario;
use crate::types::{Actor, Pid, SimTime, ZoneName};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Loss,
    Region,
    Crash,
    Expired,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordBody {
    Start,
    Stop {
        reason: String,
    },
    Spawn {
        start_at: SimTime,
        x: f64,
        y: f64,
        heading: f64,
        role: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        route: Vec<ZoneName>,
    },
    AppLoc {
        from: String,
        to: String,
        myseq: Vec<ZoneName>,
    },
    GvhPublish {
        key: SlotKey,
        value: Value,
        version: u64,
        writer: String,
    },
    Invoke {
        primitive: String,
        op: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        zones: Vec<ZoneName>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        pids: Vec<Pid>,
    },
    MsgSend {
        msg_id: u64,
        attempt: u32,
        mode: MessageMode,
        payload: Wire,
        dsts: Vec<Pid>,
    },
    MsgDeliver {
        msg_id: u64,
        src: Pid,
        payload: Wire,
    },
    MsgDrop {
        msg_id: u64,
        dst: Pid,
        reason: DropReason,
    },
    MotionTick {
        x: f64,
        y: f64,
        heading: f64,
        flag: MotionFlag,
    },
    Crash,
    Collision {
        pairs: Vec<(Pid, Pid)>,
    },
    Violation(Violation),
    Stuck {
        reason: String,
    },
    Done,
}

impl RecordBody {
    pub fn kind(&self) -> &'static str {
        match self {
            RecordBody::Start => "start",
            RecordBody::Stop { .. } => "stop",
            RecordBody::Spawn { .. } => "spawn",
            RecordBody::AppLoc { .. } => "app_loc",
            RecordBody::GvhPublish { .. } => "gvh_publish",
            RecordBody::Invoke { .. } => "invoke",
            RecordBody::MsgSend { .. } => "msg_send",
            RecordBody::MsgDeliver { .. } => "msg_deliver",
            RecordBody::MsgDrop { .. } => "msg_drop",
            RecordBody::MotionTick { .. } => "motion_tick",
            RecordBody::Crash => "crash",
            RecordBody::Collision { .. } => "collision",
            RecordBody::Violation(_) => "violation",
            RecordBody::Stuck { .. } => "stuck",
            RecordBody::Done => "done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: SimTime,
    pub ev: u64,
    pub pid: Actor,
    #[serde(flatten)]
    pub body: RecordBody,
}

impl TraceRecord {
    pub fn pid(&self) -> Option<Pid> {
        self.pid.pid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub kind: String,
    pub schema_version: u32,
    pub seed: u64,
    pub scenario: Scenario,
}

impl TraceHeader {
    pub fn new(scenario: &Scenario) -> Self {
        TraceHeader {
            kind: "header".into(),
            schema_version: SCHEMA_VERSION,
            seed: scenario.master_seed,
            scenario: scenario.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

impl Trace {
    /// Final virtual time covered by the trace.
    pub fn end_time(&self) -> SimTime {
        self.records.last().map(|r| r.time).unwrap_or_default()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut lines = r.lines().enumerate();
        let header: TraceHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?).map_err(|e| TraceError::Malformed {
                line: 1,
                msg: format!("header: {e}"),
            })?,
            None => {
                return Err(TraceError::Malformed {
                    line: 1,
                    msg: "empty trace".into(),
                })
            }
        };
        if header.schema_version != SCHEMA_VERSION {
            return Err(TraceError::Malformed {
                line: 1,
                msg: format!("unsupported schema version {}", header.schema_version),
            });
        }
        let mut records = Vec::new();
        let mut last = SimTime::ZERO;
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if rec.time < last {
                return Err(TraceError::Malformed {
                    line: i + 1,
                    msg: format!("time goes backward ({} < {})", rec.time, last),
                });
            }
            last = rec.time;
            records.push(rec);
        }
        Ok(Trace { header, records })
    }

    pub fn from_jsonl_str(s: &str) -> Result<Trace, TraceError> {
        Self::read_jsonl(s.as_bytes())
    }
}
