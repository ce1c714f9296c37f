//! Deterministic packet-level simulator for ad-hoc route discovery with
//! connection-index admission control.
//!
//! The crate is layered so each piece is testable on its own:
//!
//! - [`model`] — identifiers, sequence numbers, routing entries and the
//!   control-message vocabulary.
//! - [`node`] — the per-node state machine: pure transitions from
//!   `(state, input, now)` to a list of actions.
//! - [`sim`] — the discrete-event engine that owns time, the radio medium,
//!   per-node forwarding queues and the event trace.
//! - [`scenario`] — the text format describing topologies, traffic and
//!   parameters, plus built-in scenarios and a random generator.
//! - [`metrics`] — per-connection and global counters folded from a trace,
//!   with a stable CSV rendering.
//! - [`trace`] — the append-only event record and its text round-trip.

pub mod metrics;
pub mod model;
pub mod node;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use metrics::{compare, compute_report, Comparison, MetricsError, MetricsReport};
pub use model::{
    ControlMessage, DataPacket, DropReason, FailReason, NodeId, Protocol, RouteId, RouteLimit,
    SeqNo, SimTime,
};
pub use node::{admission_check, Action, AdmissionDecision, NodeParams, NodeState};
pub use scenario::ScenarioSpec;
pub use sim::Simulation;
pub use trace::SimTrace;
