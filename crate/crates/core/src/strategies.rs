//! Pluggable hidden-variable programs: a source emitter plus two
//! station responders.
//!
//! Locality is enforced by shape: [`Strategy::respond`] receives the
//! responding station, that station's own setting, the source
//! parameter, the station's tick view and a stream factory — there is
//! no slot through which the other station's setting could arrive. The
//! one nonlocal strategy (the quantum reference sampler) is excluded
//! from this path entirely and must be driven through
//! [`Strategy::joint_respond`].

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{
    InstructionSet, InstrumentParameter, Outcome, Setting, SettingPair, SourceDistribution,
    SourceParameter, StationId, Tick, SETTINGS,
};
use crate::rng::RngTree;
use rand::Rng;

/// Draw a source parameter for the pair emitted at `t`.
///
/// Sampling is keyed by (seed, tick) only: the same ρ governs every
/// emission, draws at distinct ticks are independent, and the settings
/// play no part.
pub fn emit(dist: &SourceDistribution, t: Tick, tree: &RngTree) -> SourceParameter {
    let u: f64 = tree.emit_stream(t).random();
    let mut acc = 0.0;
    let weights = dist.weights();
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return SourceParameter(i as u32);
        }
    }
    // weights sum to 1 within tolerance; the tail lands on the last id
    SourceParameter(weights.len() as u32 - 1)
}

/// Agreement probabilities for the nonlocal reference sampler.
///
/// Defaults model the textbook two-channel device: equal settings
/// always flash the same color; unequal settings agree a quarter of the
/// time (cos² of half the 120° separation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumReferenceTable {
    pub same_setting_agree: f64,
    pub cross_setting_agree: f64,
}

impl Default for QuantumReferenceTable {
    fn default() -> Self {
        QuantumReferenceTable {
            same_setting_agree: 1.0,
            cross_setting_agree: 0.25,
        }
    }
}

impl QuantumReferenceTable {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("same_setting_agree", self.same_setting_agree),
            ("cross_setting_agree", self.cross_setting_agree),
        ] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(CoreError::Config(format!(
                    "{name} = {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Instrument-parameter generation for the time-and-setting-dependent
/// model. Generation reads only (station, setting, tick) — never the
/// source parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InstrumentTables {
    /// Per-(station, setting) lookup keyed by tick residue mod `period`.
    Periodic {
        period: u32,
        /// `station1[s][r]` = parameter id for setting `s` at residue `r`.
        station1: [Vec<u32>; 3],
        station2: [Vec<u32>; 3],
    },
    /// Per-(station, setting) seeded stream over ticks; ids uniform in
    /// `[0, num_params)`. With `mirrored` the two stations share one
    /// stream per (setting, tick) and so realize identical parameters.
    Stochastic { num_params: u32, mirrored: bool },
}

/// Response table: outcome as a function of (instrument parameter id,
/// source parameter id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseTable {
    /// `rows[iparam_id][lambda_id]`
    pub rows: Vec<Vec<Outcome>>,
}

impl ResponseTable {
    pub fn lookup(&self, iparam: u32, lam: SourceParameter) -> Result<Outcome> {
        let row = self.rows.get(iparam as usize).ok_or_else(|| {
            CoreError::Contract(format!(
                "response table has no row for instrument parameter {iparam}"
            ))
        })?;
        row.get(lam.0 as usize).copied().ok_or_else(|| {
            CoreError::Contract(format!(
                "response table row {iparam} has no column for source parameter {}",
                lam.0
            ))
        })
    }
}

/// Time-and-setting-dependent instrument-parameter model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessPhilippConfig {
    pub tables: InstrumentTables,
    pub response: ResponseTable,
}

impl HessPhilippConfig {
    pub fn validate(&self) -> Result<()> {
        let num_params = match &self.tables {
            InstrumentTables::Periodic {
                period,
                station1,
                station2,
            } => {
                if *period == 0 {
                    return Err(CoreError::Config("table period must be >= 1".into()));
                }
                let mut max_id = 0;
                for (who, tables) in [("station1", station1), ("station2", station2)] {
                    for (s, col) in tables.iter().enumerate() {
                        if col.len() != *period as usize {
                            return Err(CoreError::Config(format!(
                                "{who} setting {} table has {} entries, expected period {period}",
                                s + 1,
                                col.len()
                            )));
                        }
                        max_id = max_id.max(*col.iter().max().expect("period >= 1"));
                    }
                }
                max_id + 1
            }
            InstrumentTables::Stochastic { num_params, .. } => {
                if *num_params == 0 {
                    return Err(CoreError::Config(
                        "stochastic tables need num_params >= 1".into(),
                    ));
                }
                *num_params
            }
        };
        if (self.response.rows.len() as u32) < num_params {
            return Err(CoreError::Config(format!(
                "response table has {} rows but tables produce ids up to {}",
                self.response.rows.len(),
                num_params - 1
            )));
        }
        let k = self.response.rows.first().map(Vec::len).unwrap_or(0);
        if k == 0 {
            return Err(CoreError::Config("response table has no columns".into()));
        }
        if let Some(bad) = self.response.rows.iter().find(|r| r.len() != k) {
            return Err(CoreError::Config(format!(
                "response table rows must all have {k} columns, found one with {}",
                bad.len()
            )));
        }
        Ok(())
    }

    /// Alphabet size the response table supports.
    pub fn lambda_columns(&self) -> usize {
        self.response.rows.first().map(Vec::len).unwrap_or(0)
    }

    /// Instrument parameter id for (station, setting, tick). Blind to
    /// the source parameter by construction.
    pub fn instrument_id(&self, who: StationId, x: Setting, t: Tick, tree: &RngTree) -> u32 {
        match &self.tables {
            InstrumentTables::Periodic {
                period,
                station1,
                station2,
            } => {
                let tables = match who {
                    StationId::Station1 => station1,
                    StationId::Station2 => station2,
                };
                tables[x.index()][(t.0 % *period as u64) as usize]
            }
            InstrumentTables::Stochastic {
                num_params,
                mirrored,
            } => {
                let key_station = if *mirrored { None } else { Some(who) };
                tree.table_stream(key_station, x, t)
                    .random_range(0..*num_params)
            }
        }
    }
}

/// The strategy families the harness can host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    /// Both stations obey the instruction set selected by the source
    /// parameter: `map[lambda]`. Time-blind.
    DeterministicSet { map: Vec<InstructionSet> },
    /// Both stations read the source parameter directly as an
    /// instruction-set index (requires alphabet size 8); the mixture
    /// over sets is whatever ρ says.
    MixedSet,
    /// Arbitrary per-station response maps A(x, Λ), B(x, Λ), constant
    /// in time. `stationN[lambda]` is station N's map.
    BellStatic {
        station1: Vec<InstructionSet>,
        station2: Vec<InstructionSet>,
    },
    /// Time-and-setting-dependent instrument parameters feeding a
    /// shared response table.
    HessPhilipp(HessPhilippConfig),
    /// Nonlocal correlation-table sampler; comparison target only.
    QuantumReference(QuantumReferenceTable),
}

/// A named hidden-variable program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub name: String,
    #[serde(flatten)]
    kind: StrategyKind,
}

impl Strategy {
    pub fn new(name: impl Into<String>, kind: StrategyKind) -> Result<Self> {
        let s = Strategy {
            name: name.into(),
            kind,
        };
        s.validate()?;
        Ok(s)
    }

    /// The canonical single-set strategy: every source parameter maps
    /// to `set`.
    pub fn single_set(set: InstructionSet) -> Self {
        Strategy {
            name: format!("set-{set}"),
            kind: StrategyKind::DeterministicSet { map: vec![set] },
        }
    }

    pub fn kind(&self) -> &StrategyKind {
        &self.kind
    }

    /// False exactly for the quantum reference sampler.
    pub fn is_local(&self) -> bool {
        !matches!(self.kind, StrategyKind::QuantumReference(_))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            StrategyKind::DeterministicSet { map } => {
                if map.is_empty() {
                    return Err(CoreError::Config(
                        "deterministic_set needs at least one instruction set".into(),
                    ));
                }
            }
            StrategyKind::MixedSet => {}
            StrategyKind::BellStatic { station1, station2 } => {
                if station1.is_empty() || station1.len() != station2.len() {
                    return Err(CoreError::Config(format!(
                        "bell_static station maps must be nonempty and equal length, got {} and {}",
                        station1.len(),
                        station2.len()
                    )));
                }
            }
            StrategyKind::HessPhilipp(cfg) => cfg.validate()?,
            StrategyKind::QuantumReference(t) => t.validate()?,
        }
        Ok(())
    }

    /// Check the strategy against a source alphabet of size `k`.
    pub fn validate_for_alphabet(&self, k: usize) -> Result<()> {
        self.validate()?;
        match &self.kind {
            StrategyKind::DeterministicSet { map } => {
                if map.len() != 1 && map.len() != k {
                    return Err(CoreError::Config(format!(
                        "deterministic_set map has {} entries; need 1 or alphabet size {k}",
                        map.len()
                    )));
                }
            }
            StrategyKind::MixedSet => {
                if k != InstructionSet::COUNT as usize {
                    return Err(CoreError::Config(format!(
                        "mixed_set reads the source parameter as a set index and needs \
                         alphabet size 8, got {k}"
                    )));
                }
            }
            StrategyKind::BellStatic { station1, .. } => {
                if station1.len() != k {
                    return Err(CoreError::Config(format!(
                        "bell_static maps cover {} source parameters but alphabet size is {k}",
                        station1.len()
                    )));
                }
            }
            StrategyKind::HessPhilipp(cfg) => {
                if cfg.lambda_columns() != k {
                    return Err(CoreError::Config(format!(
                        "response table has {} source-parameter columns but alphabet size is {k}",
                        cfg.lambda_columns()
                    )));
                }
            }
            StrategyKind::QuantumReference(_) => {}
        }
        Ok(())
    }

    /// Station response. The inputs are the full causal past available
    /// to the station: its identity, its own setting, the source
    /// parameter, its clock view and station-local randomness. Errors
    /// on the nonlocal reference.
    pub fn respond(
        &self,
        who: StationId,
        x: Setting,
        lam: SourceParameter,
        t: Tick,
        tree: &RngTree,
    ) -> Result<(Outcome, InstrumentParameter)> {
        let trivial_iparam = InstrumentParameter {
            id: 0,
            station: who,
            setting: x,
            tick: t,
        };
        match &self.kind {
            StrategyKind::DeterministicSet { map } => {
                let set = if map.len() == 1 {
                    map[0]
                } else {
                    *map.get(lam.0 as usize).ok_or_else(|| {
                        CoreError::Contract(format!(
                            "source parameter {} outside deterministic_set map of {} entries",
                            lam.0,
                            map.len()
                        ))
                    })?
                };
                Ok((set.response(x), trivial_iparam))
            }
            StrategyKind::MixedSet => {
                let set = InstructionSet::from_index(lam.0 as u8).map_err(|_| {
                    CoreError::Contract(format!(
                        "mixed_set received source parameter {} outside 0..8",
                        lam.0
                    ))
                })?;
                Ok((set.response(x), trivial_iparam))
            }
            StrategyKind::BellStatic { station1, station2 } => {
                let maps = match who {
                    StationId::Station1 => station1,
                    StationId::Station2 => station2,
                };
                let set = *maps.get(lam.0 as usize).ok_or_else(|| {
                    CoreError::Contract(format!(
                        "source parameter {} outside bell_static map of {} entries",
                        lam.0,
                        maps.len()
                    ))
                })?;
                Ok((set.response(x), trivial_iparam))
            }
            StrategyKind::HessPhilipp(cfg) => {
                let id = cfg.instrument_id(who, x, t, tree);
                let outcome = cfg.response.lookup(id, lam)?;
                Ok((
                    outcome,
                    InstrumentParameter {
                        id,
                        station: who,
                        setting: x,
                        tick: t,
                    },
                ))
            }
            StrategyKind::QuantumReference(_) => Err(CoreError::Contract(format!(
                "strategy {:?} is nonlocal; drive it through joint_respond",
                self.name
            ))),
        }
    }

    /// Joint sampling for the nonlocal reference. Errors on local
    /// strategies: their whole point is that no joint path exists.
    pub fn joint_respond(
        &self,
        pair: SettingPair,
        t: Tick,
        tree: &RngTree,
    ) -> Result<(Outcome, Outcome)> {
        let StrategyKind::QuantumReference(table) = &self.kind else {
            return Err(CoreError::Contract(format!(
                "strategy {:?} is local; drive it through respond",
                self.name
            )));
        };
        let mut rng = tree.joint_stream(t);
        let first = if rng.random::<bool>() {
            Outcome::Green
        } else {
            Outcome::Red
        };
        let agree_p = if pair.is_diagonal() {
            table.same_setting_agree
        } else {
            table.cross_setting_agree
        };
        let second = if rng.random::<f64>() < agree_p {
            first
        } else {
            first.flipped()
        };
        Ok((first, second))
    }

    /// Probe both stations at all three settings with the same
    /// (tick, source parameter): the realized per-station response
    /// maps. Local strategies only; stochastic table draws are fixed by
    /// the stream keying, so the probe is reproducible.
    pub fn counterfactual_table(
        &self,
        t: Tick,
        lam: SourceParameter,
        tree: &RngTree,
    ) -> Result<(InstructionSet, InstructionSet)> {
        if !self.is_local() {
            return Err(CoreError::Contract(format!(
                "strategy {:?} is nonlocal; counterfactual probing is undefined",
                self.name
            )));
        }
        let mut maps = [[Outcome::Red; 3]; 2];
        for (i, who) in [StationId::Station1, StationId::Station2].into_iter().enumerate() {
            for x in SETTINGS {
                let (o, _) = self.respond(who, x, lam, t, tree)?;
                maps[i][x.index()] = o;
            }
        }
        Ok((
            InstructionSet::from_responses(maps[0]),
            InstructionSet::from_responses(maps[1]),
        ))
    }
}

/// Per-trial audit entry: which hidden parameters were realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub tick: Tick,
    pub lambda: SourceParameter,
    pub iparam1: u32,
    pub iparam2: u32,
}

/// Tick-ordered trace of realized hidden parameters, one entry per
/// trial; input to the independence tests.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuditTrace {
    pub entries: Vec<AuditEntry>,
}

impl AuditTrace {
    pub fn lambda_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.lambda.0).collect()
    }

    pub fn iparam_ids(&self, who: StationId) -> Vec<u32> {
        self.entries
            .iter()
            .map(|e| match who {
                StationId::Station1 => e.iparam1,
                StationId::Station2 => e.iparam2,
            })
            .collect()
    }
}

/// A ready-made period-2 sign-flip model with mirrored stations: the
/// realized response at every setting flips between consecutive ticks
/// (a time-variability witness) while the two stations agree at every
/// (setting, tick) (perfect correlation on equal settings).
pub fn mirrored_flip_example(alphabet: usize) -> HessPhilippConfig {
    let table: [Vec<u32>; 3] = [vec![0, 1], vec![0, 1], vec![0, 1]];
    HessPhilippConfig {
        tables: InstrumentTables::Periodic {
            period: 2,
            station1: table.clone(),
            station2: table,
        },
        response: ResponseTable {
            rows: vec![
                vec![Outcome::Green; alphabet],
                vec![Outcome::Red; alphabet],
            ],
        },
    }
}
