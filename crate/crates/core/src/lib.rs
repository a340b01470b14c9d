//! Deterministic QoS-driven reconfiguration engine for distributed
//! component-based applications.
//!
//! The crate is `no_std` and only needs `alloc`. It covers:
//!
//! * [`qos`]: marking characteristics against user wishes, criterion
//!   aggregation, the min rule and the service-proximity predicate;
//! * [`app`]: application structure, configurations, the configuration
//!   space and its partition into families;
//! * [`context`]: the simulated execution context, flow propagation and
//!   reconfiguration-event detection;
//! * [`events`]: the priority queue of reconfiguration events;
//! * [`search`]: the staged family-based search and the exhaustive oracle;
//! * [`runtime`]: the tick loop, reconfiguration orders and the trace;
//! * [`scenario`] and [`reference`]: scenario descriptions and the bundled
//!   reference scenarios.
//!
//! IO (JSON files, CSV, the command line) lives in the companion `qosim`
//! crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod app;
pub mod context;
pub mod events;
pub mod ids;
pub mod qos;
pub mod reference;
pub mod runtime;
pub mod scenario;
pub mod search;

pub use app::{Application, CompiledApp, Configuration};
pub use ids::{CharId, ConductId, GroupId, LinkId, SlotId, StationId, SubGroupId, VariantId};
pub use qos::{CriterionMarks, QoSReport, UserProfile};
pub use scenario::{Parameters, Scenario};

/// Absolute tolerance for comparing marks.
pub const MARK_EPS: f64 = 1e-9;
