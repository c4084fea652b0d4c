//! Deterministic per-purpose random streams.
//!
//! Every random draw in a run comes from a stream keyed by
//! (run seed, purpose, tick, extra), so trials can execute in any order
//! or degree of parallelism and still reproduce bit-identically. The
//! key is packed directly into a ChaCha8 seed; no two distinct keys
//! collide.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Setting, StationId, Tick};

/// Purpose tag for a derived stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    /// Initial pair-to-tick interleaving when building a schedule.
    ScheduleBuild,
    /// Post-emission redraw of setting pairs (delayed choice).
    DelayedChoice,
    /// Source parameter emission.
    Emit,
    /// Station-local response randomness.
    Station(StationId),
    /// Joint sampling by the nonlocal reference.
    Joint,
    /// Stochastic instrument-parameter table, per station.
    InstrumentTable(StationId),
    /// Stochastic instrument-parameter table shared by both stations
    /// (mirrored mode).
    InstrumentTableShared,
    /// Permutation-test shuffles.
    Permutation,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::ScheduleBuild => 1,
            StreamDomain::DelayedChoice => 2,
            StreamDomain::Emit => 3,
            StreamDomain::Station(s) => 4 + s.index() as u64,
            StreamDomain::Joint => 6,
            StreamDomain::InstrumentTable(s) => 7 + s.index() as u64,
            StreamDomain::InstrumentTableShared => 9,
            StreamDomain::Permutation => 10,
        }
    }
}

/// Splittable stream factory for one run. Copyable and thread-safe;
/// workers derive whatever streams they need locally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngTree {
    seed: u64,
}

impl RngTree {
    pub fn new(seed: u64) -> Self {
        RngTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive the stream for (domain, tick, extra).
    pub fn stream(&self, domain: StreamDomain, tick: Tick, extra: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.tag().to_le_bytes());
        key[16..24].copy_from_slice(&tick.0.to_le_bytes());
        key[24..32].copy_from_slice(&extra.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    pub fn emit_stream(&self, tick: Tick) -> ChaCha8Rng {
        self.stream(StreamDomain::Emit, tick, 0)
    }

    pub fn station_stream(&self, who: StationId, x: Setting, tick: Tick) -> ChaCha8Rng {
        self.stream(StreamDomain::Station(who), tick, x.index() as u64)
    }

    pub fn joint_stream(&self, tick: Tick) -> ChaCha8Rng {
        self.stream(StreamDomain::Joint, tick, 0)
    }

    /// Stream for a stochastic instrument-parameter table entry.
    /// Mirrored tables share one stream per (setting, tick) so the two
    /// stations realize identical parameters.
    pub fn table_stream(&self, who: Option<StationId>, x: Setting, tick: Tick) -> ChaCha8Rng {
        let domain = match who {
            Some(s) => StreamDomain::InstrumentTable(s),
            None => StreamDomain::InstrumentTableShared,
        };
        self.stream(domain, tick, x.index() as u64)
    }
}
