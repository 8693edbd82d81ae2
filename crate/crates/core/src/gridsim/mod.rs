//! Discrete-event simulation of sites, pilots, workloads and data staging
//! around one pool.

pub mod engine;
pub mod scenario;
mod sim;
pub mod trace;
pub mod workload;

pub use engine::{substream, EventQueue};
pub use scenario::{Distribution, Scenario, ScenarioError};
pub use sim::{run, SimError};
pub use trace::{replay_summary, Record, RecordKind, Summary, Trace, TraceError, TraceHeader};
