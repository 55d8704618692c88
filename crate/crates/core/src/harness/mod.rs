//! Scenario runner: deterministic event loop, trace and metrics output, and
//! the offline trace verifier.

pub mod metrics;
pub mod scenario;
pub mod scheduler;
pub mod trace;
pub mod verify;
pub mod world;

pub use metrics::MetricsRecord;
pub use scenario::{Action, ConfigError, Scenario};
pub use trace::{parse_trace, trace_hash, MalformedTrace, TraceEvent, TraceRecord};
pub use verify::{verify_trace, verify_trace_text, Violation};
pub use world::{run_scenario, ProcedureRecord, RunOutput, RunSummary, World};
