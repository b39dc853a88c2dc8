//! Deterministic simulation of robots coordinating over a lossy network.
//!
//! The crate bundles a discrete-event engine, a geocast/unicast network
//! model, a simple point-robot physics layer, the coordination primitives
//! (registration, leader election and multi-resource mutual exclusion), a
//! four-way intersection application built on them, and a runtime monitor
//! that checks safety properties against the JSONL trace.
//!
//! ```
//! use coordsim::scenario::load_bundled;
//! use coordsim::world::{run_scenario, RunOptions};
//!
//! let sc = load_bundled("solo").unwrap();
//! let out = run_scenario(&sc, RunOptions::default()).unwrap();
//! assert!(out.success());
//! ```

pub mod engine;
pub mod gvh;
pub mod icp;
pub mod monitor;
pub mod net;
pub mod physics;
pub mod primitives;
pub mod render;
pub mod scenario;
pub mod trace;
pub mod types;
pub mod world;

pub use scenario::Scenario;
pub use trace::{Trace, TraceRecord};
pub use types::{Pid, SimTime, ZoneName};
pub use world::{run_scenario, RunOptions, RunOutput};
