//! Domain vocabulary shared by every other module: settings, outcomes,
//! stations, ticks, source and instrument parameters, instruction sets,
//! schedules and trial records.
//!
//! Canonical text renderings (used verbatim in all file outputs):
//! settings `1|2|3`, outcomes `G|R`, instruction sets as three-character
//! strings over `{G,R}` ordered by setting, setting pairs as two-digit
//! strings like `12`.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CoreError, Result};

/// Detector setting; one of three per station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Setting {
    S1,
    S2,
    S3,
}

pub const SETTINGS: [Setting; 3] = [Setting::S1, Setting::S2, Setting::S3];

impl Setting {
    pub fn index(self) -> usize {
        match self {
            Setting::S1 => 0,
            Setting::S2 => 1,
            Setting::S3 => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        SETTINGS
            .get(i)
            .copied()
            .ok_or_else(|| CoreError::Config(format!("setting index {i} out of range 0..3")))
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

impl FromStr for Setting {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Setting::S1),
            "2" => Ok(Setting::S2),
            "3" => Ok(Setting::S3),
            other => Err(CoreError::Config(format!(
                "unknown setting {other:?}, expected 1|2|3"
            ))),
        }
    }
}

impl Serialize for Setting {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Optional unit direction vector attached to a setting. Pure metadata:
/// no computation in this crate reads it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Direction([f64; 3]);

impl Direction {
    pub const NORM_TOL: f64 = 1e-12;

    pub fn new(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if (norm - 1.0).abs() > Self::NORM_TOL {
            return Err(CoreError::Config(format!(
                "direction {v:?} has norm {norm}, expected 1 within {}",
                Self::NORM_TOL
            )));
        }
        Ok(Direction(v))
    }

    pub fn components(&self) -> [f64; 3] {
        self.0
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 3]>::deserialize(de)?;
        Direction::new(v).map_err(D::Error::custom)
    }
}

/// Detector flash: green (+1) or red (−1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    Green,
    Red,
}

impl Outcome {
    /// +1 for green, −1 for red.
    pub fn value(self) -> i8 {
        match self {
            Outcome::Green => 1,
            Outcome::Red => -1,
        }
    }

    pub fn from_value(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Outcome::Green),
            -1 => Ok(Outcome::Red),
            other => Err(CoreError::Config(format!(
                "outcome value {other} not in {{+1, -1}}"
            ))),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Outcome::Green => Outcome::Red,
            Outcome::Red => Outcome::Green,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Green => "G",
            Outcome::Red => "R",
        })
    }
}

impl FromStr for Outcome {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G" => Ok(Outcome::Green),
            "R" => Ok(Outcome::Red),
            other => Err(CoreError::Config(format!(
                "unknown outcome {other:?}, expected G|R"
            ))),
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// One of the two measurement stations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StationId {
    Station1,
    Station2,
}

impl StationId {
    pub fn index(self) -> usize {
        match self {
            StationId::Station1 => 0,
            StationId::Station2 => 1,
        }
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

impl Serialize for StationId {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_u8(self.index() as u8 + 1)
    }
}

impl<'de> Deserialize<'de> for StationId {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        match u8::deserialize(de)? {
            1 => Ok(StationId::Station1),
            2 => Ok(StationId::Station2),
            other => Err(D::Error::custom(format!("station {other} not in {{1, 2}}"))),
        }
    }
}

/// Discrete non-negative measurement time.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct Tick(pub u64);

impl Tick {
    /// Station-local view of this tick under a clock offset.
    pub fn offset_by(self, offset: i64, station: StationId) -> Result<Tick> {
        let shifted = self.0 as i64 + offset;
        if shifted < 0 {
            return Err(CoreError::ClockUnderflow {
                station,
                offset,
                tick: self,
            });
        }
        Ok(Tick(shifted as u64))
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Hidden variable carried by the emitted pair; an id in `[0, K)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct SourceParameter(pub u32);

/// Station-local hidden parameter, tagged with exactly one
/// (station, setting, tick) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentParameter {
    pub id: u32,
    pub station: StationId,
    pub setting: Setting,
    pub tick: Tick,
}

/// Total map from the three settings to outcomes; exactly eight exist.
///
/// Encoded as an index 0..8 where the bit for a setting (S1 most
/// significant) is 1 for green: index 7 = `GGG`, index 6 = `GGR`,
/// index 0 = `RRR`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstructionSet(u8);

impl InstructionSet {
    pub const COUNT: u8 = 8;

    pub fn from_index(i: u8) -> Result<Self> {
        if i < Self::COUNT {
            Ok(InstructionSet(i))
        } else {
            Err(CoreError::Config(format!(
                "instruction set index {i} out of range 0..8"
            )))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// All eight instruction sets in index order.
    pub fn all() -> impl Iterator<Item = InstructionSet> {
        (0..Self::COUNT).map(InstructionSet)
    }

    /// The outcome this set dictates for a setting. Total and
    /// deterministic.
    pub fn response(self, x: Setting) -> Outcome {
        let bit = 2 - x.index(); // S1 is the most significant bit
        if self.0 >> bit & 1 == 1 {
            Outcome::Green
        } else {
            Outcome::Red
        }
    }

    pub fn from_responses(r: [Outcome; 3]) -> Self {
        let mut idx = 0u8;
        for (i, o) in r.iter().enumerate() {
            if *o == Outcome::Green {
                idx |= 1 << (2 - i);
            }
        }
        InstructionSet(idx)
    }
}

impl fmt::Display for InstructionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in SETTINGS {
            write!(f, "{}", self.response(s))?;
        }
        Ok(())
    }
}

impl FromStr for InstructionSet {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 3 {
            return Err(CoreError::Config(format!(
                "instruction set {s:?} must be 3 characters over {{G,R}}"
            )));
        }
        let mut responses = [Outcome::Red; 3];
        for (i, c) in chars.iter().enumerate() {
            responses[i] = match c {
                'G' => Outcome::Green,
                'R' => Outcome::Red,
                other => {
                    return Err(CoreError::Config(format!(
                        "instruction set {s:?}: unexpected character {other:?}"
                    )))
                }
            };
        }
        Ok(InstructionSet::from_responses(responses))
    }
}

impl Serialize for InstructionSet {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InstructionSet {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Fixed distribution ρ of the source parameter over `[0, K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceDistribution {
    weights: Vec<f64>,
}

impl SourceDistribution {
    pub const SUM_TOL: f64 = 1e-12;
    pub const DEFAULT_ALPHABET: usize = 8;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::Config("source distribution is empty".into()));
        }
        if let Some(w) = weights.iter().find(|w| **w < 0.0 || !w.is_finite()) {
            return Err(CoreError::Config(format!(
                "source distribution has invalid weight {w}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(CoreError::Config(format!(
                "source distribution weights sum to {sum}, expected 1 within {}",
                Self::SUM_TOL
            )));
        }
        Ok(SourceDistribution { weights })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(CoreError::Config("source alphabet size must be >= 1".into()));
        }
        Ok(SourceDistribution {
            weights: vec![1.0 / k as f64; k],
        })
    }

    pub fn point_mass(id: u32, k: usize) -> Result<Self> {
        if (id as usize) >= k {
            return Err(CoreError::Config(format!(
                "point mass id {id} outside alphabet [0, {k})"
            )));
        }
        let mut weights = vec![0.0; k];
        weights[id as usize] = 1.0;
        Ok(SourceDistribution { weights })
    }

    /// Alphabet size K.
    pub fn alphabet_size(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Ids with strictly positive weight.
    pub fn support(&self) -> impl Iterator<Item = SourceParameter> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| SourceParameter(i as u32))
    }
}

/// Ordered pair of settings, station 1 first. Rendered `11`, `12`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SettingPair {
    pub first: Setting,
    pub second: Setting,
}

impl SettingPair {
    pub fn new(first: Setting, second: Setting) -> Self {
        SettingPair { first, second }
    }

    pub fn is_diagonal(self) -> bool {
        self.first == self.second
    }

    /// All nine ordered pairs in row-major order (11, 12, 13, 21, ...).
    pub fn all() -> impl Iterator<Item = SettingPair> {
        SETTINGS
            .into_iter()
            .flat_map(|a| SETTINGS.into_iter().map(move |b| SettingPair::new(a, b)))
    }
}

impl fmt::Display for SettingPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.first, self.second)
    }
}

impl FromStr for SettingPair {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 2 {
            return Err(CoreError::Config(format!(
                "setting pair {s:?} must be two digits, e.g. \"12\""
            )));
        }
        Ok(SettingPair::new(
            chars[0].to_string().parse()?,
            chars[1].to_string().parse()?,
        ))
    }
}

impl Serialize for SettingPair {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SettingPair {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// One planned measurement: when, which settings, and whether the pair
/// is redrawn after emission (delayed choice).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub tick: Tick,
    pub pair: SettingPair,
    pub delayed: bool,
}

/// Validated measurement plan: entries sorted by tick, all ticks
/// distinct, and every setting pair that appears occurs equally often.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSchedule {
    entries: Vec<ScheduleEntry>,
    pairs_per_setting: u64,
}

impl TrialSchedule {
    pub fn new(mut entries: Vec<ScheduleEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(CoreError::Config("schedule has no entries".into()));
        }
        entries.sort_by_key(|e| e.tick);
        for w in entries.windows(2) {
            if w[0].tick == w[1].tick {
                return Err(CoreError::Config(format!(
                    "duplicate tick {} in schedule; all measurement times must differ",
                    w[0].tick
                )));
            }
        }
        let mut counts = std::collections::BTreeMap::new();
        for e in &entries {
            *counts.entry(e.pair).or_insert(0u64) += 1;
        }
        let l = *counts.values().next().expect("nonempty");
        if let Some((pair, n)) = counts.iter().find(|(_, n)| **n != l) {
            return Err(CoreError::Config(format!(
                "unbalanced schedule: pair {pair} occurs {n} times but others occur {l}"
            )));
        }
        Ok(TrialSchedule {
            entries,
            pairs_per_setting: l,
        })
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    /// L: occurrences of each setting pair present.
    pub fn pairs_per_setting(&self) -> u64 {
        self.pairs_per_setting
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct pairs present, in canonical order.
    pub fn pairs_present(&self) -> Vec<SettingPair> {
        let mut pairs: Vec<SettingPair> = SettingPair::all()
            .filter(|p| self.entries.iter().any(|e| e.pair == *p))
            .collect();
        pairs.dedup();
        pairs
    }

    /// Replace the pair column, keeping ticks and flags. The caller
    /// guarantees the new pairs are a permutation of the old multiset,
    /// so the schedule invariants carry over without revalidation.
    pub(crate) fn with_pairs(&self, pairs: Vec<SettingPair>) -> Result<Self> {
        if pairs.len() != self.entries.len() {
            return Err(CoreError::Config(
                "pair reassignment length mismatch".into(),
            ));
        }
        debug_assert_eq!(
            {
                let mut a: Vec<_> = pairs.clone();
                a.sort_unstable();
                a
            },
            {
                let mut b: Vec<_> = self.entries.iter().map(|e| e.pair).collect();
                b.sort_unstable();
                b
            },
            "pair reassignment must be a permutation"
        );
        let entries = self
            .entries
            .iter()
            .zip(pairs)
            .map(|(e, pair)| ScheduleEntry { pair, ..*e })
            .collect();
        Ok(TrialSchedule {
            entries,
            pairs_per_setting: self.pairs_per_setting,
        })
    }
}

/// Audit record of one completed measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub tick: Tick,
    pub pair: SettingPair,
    pub lambda: SourceParameter,
    pub outcome1: Outcome,
    pub outcome2: Outcome,
    pub iparam1: InstrumentParameter,
    pub iparam2: InstrumentParameter,
    /// True when the trial was produced by the nonlocal reference
    /// sampler rather than per-station responses.
    pub nonlocal: bool,
}

impl TrialRecord {
    /// Structural invariants: each instrument parameter belongs to its
    /// station, matches the recorded setting, and is tagged with that
    /// station's view of the trial tick.
    pub fn validate(&self, clock_offsets: (i64, i64)) -> Result<()> {
        let checks = [
            (
                &self.iparam1,
                StationId::Station1,
                self.pair.first,
                clock_offsets.0,
            ),
            (
                &self.iparam2,
                StationId::Station2,
                self.pair.second,
                clock_offsets.1,
            ),
        ];
        for (ip, station, setting, offset) in checks {
            if ip.station != station {
                return Err(CoreError::Config(format!(
                    "record at tick {}: instrument parameter station {} != {}",
                    self.tick, ip.station, station
                )));
            }
            if ip.setting != setting {
                return Err(CoreError::Config(format!(
                    "record at tick {}: instrument parameter setting {} != recorded setting {}",
                    self.tick, ip.setting, setting
                )));
            }
            let expected = self.tick.offset_by(offset, station)?;
            if ip.tick != expected {
                return Err(CoreError::Config(format!(
                    "record at tick {}: instrument parameter tick {} != station view {}",
                    self.tick, ip.tick, expected
                )));
            }
        }
        Ok(())
    }

    pub fn same_color(&self) -> bool {
        self.outcome1 == self.outcome2
    }
}
