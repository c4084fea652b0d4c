use thiserror::Error;

use crate::model::{StationId, Tick};

/// Errors raised by the simulation core.
///
/// The variants are grouped by how a front end should treat them:
/// configuration problems (rejected before any trial runs), contract
/// violations (a strategy was driven outside its declared interface),
/// and data problems (a statistic was requested that the data cannot
/// support).
#[derive(Debug, Error)]
pub enum CoreError {
    /// A value failed a structural invariant (bad index, bad weight
    /// vector, malformed schedule, ...). These are configuration
    /// mistakes, not runtime failures.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A strategy was called through the wrong interface, e.g. a
    /// nonlocal reference sampler driven through the per-station
    /// response path.
    #[error("strategy contract violation: {0}")]
    Contract(String),

    /// A trial could not be completed; carries the offending tick so a
    /// run abort can be pinpointed.
    #[error("trial at tick {tick} aborted: {reason}")]
    TrialAborted { tick: Tick, reason: String },

    /// A statistic was requested on data that cannot support it, e.g.
    /// a frequency with positive weight on a setting pair that was
    /// never measured.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// An independence test was asked about a variable with a single
    /// observed category; independence is undefined there.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A station clock view underflowed below tick zero.
    #[error("clock offset {offset} drives station {station} below tick 0 at tick {tick}")]
    ClockUnderflow {
        station: StationId,
        offset: i64,
        tick: Tick,
    },

    /// Empty input where at least one record is required.
    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
