//! Two-station EPR thought-experiment lab.
//!
//! The crate hosts hidden-variable strategies behind a response
//! interface that structurally enforces Einstein locality (a station
//! never sees the other station's setting), runs seeded delayed-choice
//! measurement schedules over them, and measures same-color statistics,
//! perfect-correlation and time-variability behavior, and hidden
//! parameter independence. An exact oracle on arbitrary-precision
//! rationals computes the classic instruction-set bound and the
//! adversarial minimum over time-dependent strategies.
//!
//! Module map:
//! - [`model`] — settings, outcomes, parameters, instruction sets,
//!   schedules, records;
//! - [`strategies`] — the pluggable hidden-variable programs;
//! - [`harness`] — schedule building and trial execution;
//! - [`stats`] — frequencies, correlation checks, independence tests
//!   (scalar-generic);
//! - [`oracle`] — exact combinatorial results;
//! - [`rng`] — keyed deterministic random streams;
//! - [`numeric`] — the scalar abstraction and special functions.

pub mod error;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod strategies;

/// Default floating-point scalar used by the binaries and reports.
pub type Real = f64;

pub use error::{CoreError, Result};
