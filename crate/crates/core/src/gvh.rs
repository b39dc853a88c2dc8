//! Per-process global variable holder.
//!
//! Each robot owns one [`Gvh`]. A primitive instance registers the slots it
//! writes; afterwards only that instance may publish to them, while the
//! application (and the monitor, via the trace) reads them freely.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::Region;
use crate::types::{Pid, Point, SimTime, ZoneName};

/// Closed set of slot value types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    #[default]
    Null,
    Bool(bool),
    Pid(Pid),
    PidList(Vec<Pid>),
    ZoneList(Vec<ZoneName>),
    Point(Point),
    Region(Region),
    Timestamp(SimTime),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_pids(&self) -> Option<&[Pid]> {
        match self {
            Value::PidList(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_zones(&self) -> Option<&[ZoneName]> {
        match self {
            Value::ZoneList(v) => Some(v),
            _ => None,
        }
    }
}

/// `(primitive instance, field)`, e.g. `mux.crit`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotKey {
    pub instance: String,
    pub field: String,
}

impl SlotKey {
    pub fn new(instance: impl Into<String>, field: impl Into<String>) -> Self {
        SlotKey {
            instance: instance.into(),
            field: field.into(),
        }
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.instance, self.field)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GvhSlot {
    pub value: Value,
    pub version: u64,
    pub writer: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GvhError {
    #[error("slot {key} already owned by {owner}")]
    SlotAlreadyOwned { key: SlotKey, owner: String },
    #[error("{writer} is not the owner of {key}")]
    NotOwner { key: SlotKey, writer: String },
    #[error("no slot {0}")]
    UnknownSlot(SlotKey),
}

#[derive(Debug, Clone, Default)]
pub struct Gvh {
    slots: BTreeMap<SlotKey, GvhSlot>,
}

impl Gvh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_slot(&mut self, owner: &str, key: SlotKey) -> Result<(), GvhError> {
        if let Some(slot) = self.slots.get(&key) {
            return Err(GvhError::SlotAlreadyOwned {
                key,
                owner: slot.writer.clone(),
            });
        }
        self.slots.insert(
            key,
            GvhSlot {
                value: Value::Null,
                version: 0,
                writer: owner.to_string(),
            },
        );
        Ok(())
    }

    /// Stores `value` and returns the new version.
    pub fn publish(&mut self, owner: &str, key: &SlotKey, value: Value) -> Result<u64, GvhError> {
        let slot = self
            .slots
            .get_mut(key)
            .ok_or_else(|| GvhError::UnknownSlot(key.clone()))?;
        if slot.writer != owner {
            return Err(GvhError::NotOwner {
                key: key.clone(),
                writer: owner.to_string(),
            });
        }
        slot.value = value;
        slot.version += 1;
        Ok(slot.version)
    }

    pub fn read(&self, key: &SlotKey) -> Result<(&Value, u64), GvhError> {
        self.slots
            .get(key)
            .map(|s| (&s.value, s.version))
            .ok_or_else(|| GvhError::UnknownSlot(key.clone()))
    }

    /// Like [`Gvh::read`] but yields `Null` for unregistered slots.
    pub fn value(&self, instance: &str, field: &str) -> Value {
        self.slots
            .get(&SlotKey::new(instance, field))
            .map(|s| s.value.clone())
            .unwrap_or(Value::Null)
    }

    pub fn slot(&self, key: &SlotKey) -> Option<&GvhSlot> {
        self.slots.get(key)
    }
}
