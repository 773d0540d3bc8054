//! Packet-level simulator of a zero-buffer datacenter pod under central
//! slot arbitration.

pub mod arbiter;
pub mod audit;
pub mod config;
pub mod engine;
pub mod error;
pub mod framing;
pub mod host;
pub mod metrics;
pub mod sim;
pub mod sweep;
pub mod switch;
pub mod timing;
pub mod topology;
pub mod workload;

pub use engine::{Event, Scheduler, SimTime};
pub use error::{Result, SimError};
pub use topology::{HostId, LinkId, NodeId, PodTopology};
