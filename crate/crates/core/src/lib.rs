//! Deterministic simulator for a pilot-based ("glidein") workload management
//! system.
//!
//! * [`matchlang`]: attribute ads, expression parsing and three-valued evaluation.
//! * [`pool`]: collector, fair-share negotiator, job queues and claims.
//! * [`glidein`]: frontend pressure, factory submission, pilot lifecycle.
//! * [`gridsim`]: discrete-event engine, sites, workloads and traces.
//! * [`datacache`]: geo-located LRU block caches in front of data origins.
//! * [`metrics`]: usage aggregation, derived figures and run reports.

pub mod matchlang;
pub mod time;
pub mod datacache;
pub mod pool;
pub mod glidein;
pub mod gridsim;
pub mod metrics;
pub mod cli;
