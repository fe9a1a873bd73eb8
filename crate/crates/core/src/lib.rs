//! Deterministic simulator for rank-based monitoring protocols in a
//! coordinator model with a broadcast channel.
//!
//! A server is connected to `n` sensor nodes, each holding one totally
//! ordered [`DataItem`](model::DataItem). Unicast and broadcast messages both
//! cost one unit; the simulator counts them, together with communication
//! rounds, in a [`CostLedger`](netsim::CostLedger).
//!
//! Modules, bottom-up:
//!
//! * [`model`]: items, geometric heights, configuration, seed derivation.
//! * [`netsim`]: probes, broadcasts, unicasts, cost and round accounting.
//! * [`topk`]: exact one-shot Top-k via an in-order walk over random heights.
//! * [`kselect`]: constant-factor selection, its median amplification, and
//!   sampling-based approximate k-select.
//! * [`selemon`]: the dynamic rough-rank sketch (initialize, update, refresh,
//!   rough-rank).
//! * [`queries`]: multi-step Top-k and k-select driven by the sketch.
//! * [`workload`]: random and adversarial update streams, geocoin cross-check.
//! * [`harness`]: trial runner, statistics, CSV output, calibration,
//!   acceptance criteria.

pub mod error;
pub mod harness;
pub mod kselect;
pub mod model;
pub mod netsim;
pub mod queries;
pub mod selemon;
pub mod topk;
pub mod workload;

pub use error::{Error, Result};
pub use model::{Config, DataItem, Height, NodeId, NodeState, Population, RefreshStrategy};
pub use netsim::{CostLedger, Network};
