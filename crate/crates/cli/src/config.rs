//! Run-configuration files: strict TOML with collect-everything
//! validation.
//!
//! Unknown keys are fatal (all of them are reported, not just the
//! first), required fields are checked per section, and cross-field
//! invariants are verified before anything runs. Semantic errors name
//! the offending key path and its line in the source when it can be
//! located.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::Value;

use eprsim_core::harness::{RunConfig, ScheduleKind};
use eprsim_core::model::{
    Direction, InstructionSet, Outcome, Setting, SettingPair, SourceDistribution, Tick,
};
use eprsim_core::oracle::{
    AdversarialSchedule, AdversarialSearchConfig, ChoiceMode, PcMode,
};
use eprsim_core::stats::PairWeights;
use eprsim_core::strategies::{
    HessPhilippConfig, InstrumentTables, QuantumReferenceTable, ResponseTable, Strategy,
    StrategyKind,
};
use eprsim_core::Real;

use crate::error::{CliError, ConfigIssue, Result};

pub const CONFIG_VERSION: i64 = 1;

/// Which independence test the report runs on the hidden-parameter
/// traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndependenceTestKind {
    ChiSquare,
    Permutation,
}

/// Report knobs with their defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSettings {
    /// Significance level for pass/fail verdicts in reports.
    pub alpha: Real,
    /// Confidence level for the per-pair intervals.
    pub confidence: Real,
    pub independence_test: IndependenceTestKind,
    pub permutation_shuffles: u32,
    /// Optional explicit pair weights for the overall frequency
    /// (row-major over the nine ordered pairs); defaults to the
    /// realized proportions.
    pub pair_weights: Option<PairWeights<Real>>,
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings {
            alpha: 0.05,
            confidence: 0.95,
            independence_test: IndependenceTestKind::ChiSquare,
            permutation_shuffles: 10_000,
            pair_weights: None,
        }
    }
}

/// Output file paths for `run`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Outputs {
    pub records: PathBuf,
    pub report: PathBuf,
    pub csv: Option<PathBuf>,
}

/// A fully validated configuration file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigFile {
    pub version: u32,
    pub run: RunConfig,
    /// Optional unit-vector metadata per setting; never computed on.
    pub directions: BTreeMap<Setting, Direction>,
    pub outputs: Option<Outputs>,
    pub report: ReportSettings,
    pub oracle: Option<AdversarialSearchConfig>,
}

// ---------------------------------------------------------------------------
// raw (permissive) deserialization targets
// ---------------------------------------------------------------------------

#[derive(Deserialize, Default)]
struct RawConfig {
    version: Option<i64>,
    run: Option<RawRun>,
    strategy: Option<RawStrategy>,
    outputs: Option<RawOutputs>,
    report: Option<RawReport>,
    oracle: Option<RawOracle>,
}

#[derive(Deserialize, Default)]
struct RawRun {
    schedule: Option<String>,
    pairs_per_setting: Option<i64>,
    entries: Option<Vec<(u64, String)>>,
    delayed_choice: Option<bool>,
    seed: Option<i64>,
    clock_offsets: Option<(i64, i64)>,
    source: Option<RawSource>,
    directions: Option<BTreeMap<String, [f64; 3]>>,
}

#[derive(Deserialize, Default)]
struct RawSource {
    kind: Option<String>,
    k: Option<i64>,
    id: Option<i64>,
    weights: Option<Vec<f64>>,
}

#[derive(Deserialize, Default)]
struct RawStrategy {
    kind: Option<String>,
    name: Option<String>,
    sets: Option<Vec<String>>,
    station1: Option<Vec<String>>,
    station2: Option<Vec<String>>,
    table_mode: Option<String>,
    period: Option<i64>,
    num_params: Option<i64>,
    mirrored: Option<bool>,
    tables: Option<RawTables>,
    response: Option<BTreeMap<String, String>>,
    same_setting_agree: Option<f64>,
    cross_setting_agree: Option<f64>,
}

#[derive(Deserialize, Default)]
struct RawTables {
    station1: Option<BTreeMap<String, Vec<i64>>>,
    station2: Option<BTreeMap<String, Vec<i64>>>,
}

#[derive(Deserialize, Default)]
struct RawOutputs {
    records: Option<String>,
    report: Option<String>,
    csv: Option<String>,
}

#[derive(Deserialize, Default)]
struct RawReport {
    alpha: Option<f64>,
    confidence: Option<f64>,
    independence_test: Option<String>,
    permutation_shuffles: Option<i64>,
    pair_weights: Option<Vec<f64>>,
}

#[derive(Deserialize, Default)]
struct RawOracle {
    t: Option<i64>,
    schedule: Option<Value>,
    pc_mode: Option<String>,
    choice_mode: Option<String>,
}

// ---------------------------------------------------------------------------
// validation context
// ---------------------------------------------------------------------------

struct Ctx<'a> {
    src: &'a str,
    issues: Vec<ConfigIssue>,
}

impl<'a> Ctx<'a> {
    fn issue(&mut self, path: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            path: path.to_string(),
            line: key_line(self.src, path),
            message: message.into(),
        });
    }

    fn missing(&mut self, path: &str) {
        self.issue(path, "missing required field");
    }
}

/// Best-effort line lookup for a dotted key path: find the section
/// header, then the first following line that assigns the final key.
fn key_line(src: &str, path: &str) -> Option<usize> {
    let segments: Vec<&str> = path.split('.').collect();
    let key = *segments.last()?;
    let lines: Vec<&str> = src.lines().collect();
    let assigns = |line: &str, key: &str| {
        let t = line.trim_start();
        (t.starts_with(key)
            && t[key.len()..].trim_start().starts_with('=') )
            || (t.starts_with('"')
                && t[1..].starts_with(key)
                && t[1 + key.len()..].starts_with('"'))
    };
    // prefer a match inside the parent section
    if segments.len() > 1 {
        let section = segments[..segments.len() - 1].join(".");
        let header = format!("[{section}]");
        if let Some(start) = lines.iter().position(|l| l.trim() == header) {
            for (i, line) in lines.iter().enumerate().skip(start + 1) {
                if line.trim_start().starts_with('[') {
                    break;
                }
                if assigns(line, key) {
                    return Some(i + 1);
                }
            }
        }
        // the section itself may be what's being reported
        if let Some(pos) = lines
            .iter()
            .position(|l| l.trim() == format!("[{path}]"))
        {
            return Some(pos + 1);
        }
    }
    lines
        .iter()
        .position(|l| assigns(l, key))
        .map(|i| i + 1)
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

// ---------------------------------------------------------------------------
// unknown-key detection
// ---------------------------------------------------------------------------

fn check_keys(table: &toml::Table, allowed: &[&str], path: &str, ctx: &mut Ctx) {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            let full = if path.is_empty() {
                key.clone()
            } else {
                format!("{path}.{key}")
            };
            ctx.issues.push(ConfigIssue {
                path: full.clone(),
                line: key_line(ctx.src, &full),
                message: "unknown key".into(),
            });
        }
    }
}

fn subtable<'t>(table: &'t toml::Table, key: &str) -> Option<&'t toml::Table> {
    table.get(key).and_then(Value::as_table)
}

fn reject_unknown_keys(root: &toml::Table, ctx: &mut Ctx) {
    check_keys(
        root,
        &["version", "run", "strategy", "outputs", "report", "oracle"],
        "",
        ctx,
    );
    if let Some(run) = subtable(root, "run") {
        check_keys(
            run,
            &[
                "schedule",
                "pairs_per_setting",
                "entries",
                "delayed_choice",
                "seed",
                "clock_offsets",
                "source",
                "directions",
            ],
            "run",
            ctx,
        );
        if let Some(source) = subtable(run, "source") {
            check_keys(source, &["kind", "k", "id", "weights"], "run.source", ctx);
        }
        if let Some(directions) = subtable(run, "directions") {
            check_keys(directions, &["1", "2", "3"], "run.directions", ctx);
        }
    }
    if let Some(strategy) = subtable(root, "strategy") {
        let allowed: &[&str] = match strategy.get("kind").and_then(Value::as_str) {
            Some("deterministic_set") => &["kind", "name", "sets"],
            Some("mixed_set") => &["kind", "name"],
            Some("bell_static") => &["kind", "name", "station1", "station2"],
            Some("hess_philipp") => &[
                "kind",
                "name",
                "table_mode",
                "period",
                "num_params",
                "mirrored",
                "tables",
                "response",
            ],
            Some("quantum_reference") => {
                &["kind", "name", "same_setting_agree", "cross_setting_agree"]
            }
            // bad or missing kind is reported elsewhere; accept the
            // union here so only real unknowns are flagged
            _ => &[
                "kind",
                "name",
                "sets",
                "station1",
                "station2",
                "table_mode",
                "period",
                "num_params",
                "mirrored",
                "tables",
                "response",
                "same_setting_agree",
                "cross_setting_agree",
            ],
        };
        check_keys(strategy, allowed, "strategy", ctx);
        if let Some(tables) = subtable(strategy, "tables") {
            check_keys(tables, &["station1", "station2"], "strategy.tables", ctx);
            for station in ["station1", "station2"] {
                if let Some(t) = subtable(tables, station) {
                    check_keys(t, &["1", "2", "3"], &format!("strategy.tables.{station}"), ctx);
                }
            }
        }
    }
    if let Some(outputs) = subtable(root, "outputs") {
        check_keys(outputs, &["records", "report", "csv"], "outputs", ctx);
    }
    if let Some(report) = subtable(root, "report") {
        check_keys(
            report,
            &[
                "alpha",
                "confidence",
                "independence_test",
                "permutation_shuffles",
                "pair_weights",
            ],
            "report",
            ctx,
        );
    }
    if let Some(oracle) = subtable(root, "oracle") {
        check_keys(oracle, &["t", "schedule", "pc_mode", "choice_mode"], "oracle", ctx);
    }
}

// ---------------------------------------------------------------------------
// section builders
// ---------------------------------------------------------------------------

fn build_source(raw: Option<RawSource>, ctx: &mut Ctx) -> Option<SourceDistribution> {
    let Some(raw) = raw else {
        ctx.missing("run.source");
        return None;
    };
    let kind = match raw.kind.as_deref() {
        Some(k) => k,
        None => {
            ctx.missing("run.source.kind");
            return None;
        }
    };
    match kind {
        "uniform" => {
            let k = raw.k.unwrap_or(SourceDistribution::DEFAULT_ALPHABET as i64);
            if k < 1 {
                ctx.issue("run.source.k", format!("alphabet size {k} must be >= 1"));
                return None;
            }
            match SourceDistribution::uniform(k as usize) {
                Ok(d) => Some(d),
                Err(e) => {
                    ctx.issue("run.source.k", e.to_string());
                    None
                }
            }
        }
        "point_mass" => {
            let k = raw.k.unwrap_or(SourceDistribution::DEFAULT_ALPHABET as i64);
            let Some(id) = raw.id else {
                ctx.missing("run.source.id");
                return None;
            };
            if k < 1 || id < 0 {
                ctx.issue("run.source.id", "point mass needs k >= 1 and id >= 0");
                return None;
            }
            match SourceDistribution::point_mass(id as u32, k as usize) {
                Ok(d) => Some(d),
                Err(e) => {
                    ctx.issue("run.source.id", e.to_string());
                    None
                }
            }
        }
        "weights" => {
            let Some(weights) = raw.weights else {
                ctx.missing("run.source.weights");
                return None;
            };
            match SourceDistribution::new(weights) {
                Ok(d) => Some(d),
                Err(e) => {
                    ctx.issue("run.source.weights", e.to_string());
                    None
                }
            }
        }
        other => {
            ctx.issue(
                "run.source.kind",
                format!("unknown source kind {other:?}; expected uniform|point_mass|weights"),
            );
            None
        }
    }
}

fn parse_sets(raw: &[String], path: &str, ctx: &mut Ctx) -> Option<Vec<InstructionSet>> {
    let mut out = Vec::with_capacity(raw.len());
    let mut ok = true;
    for (i, s) in raw.iter().enumerate() {
        match s.parse::<InstructionSet>() {
            Ok(set) => out.push(set),
            Err(e) => {
                ctx.issue(path, format!("entry {i}: {e}"));
                ok = false;
            }
        }
    }
    ok.then_some(out)
}

fn build_station_tables(
    raw: &BTreeMap<String, Vec<i64>>,
    period: i64,
    path: &str,
    ctx: &mut Ctx,
) -> Option<[Vec<u32>; 3]> {
    let mut out: [Vec<u32>; 3] = [vec![], vec![], vec![]];
    let mut ok = true;
    for setting in ["1", "2", "3"] {
        match raw.get(setting) {
            Some(col) => {
                if col.len() != period as usize {
                    ctx.issue(
                        &format!("{path}.{setting}"),
                        format!("{} entries, expected period {period}", col.len()),
                    );
                    ok = false;
                    continue;
                }
                if let Some(bad) = col.iter().find(|v| **v < 0) {
                    ctx.issue(
                        &format!("{path}.{setting}"),
                        format!("negative instrument-parameter id {bad}"),
                    );
                    ok = false;
                    continue;
                }
                out[setting.parse::<usize>().unwrap() - 1] =
                    col.iter().map(|v| *v as u32).collect();
            }
            None => {
                ctx.missing(&format!("{path}.{setting}"));
                ok = false;
            }
        }
    }
    ok.then_some(out)
}

fn build_response_table(
    raw: &BTreeMap<String, String>,
    ctx: &mut Ctx,
) -> Option<ResponseTable> {
    let mut rows: BTreeMap<u32, Vec<Outcome>> = BTreeMap::new();
    let mut ok = true;
    for (key, row) in raw {
        let Ok(id) = key.parse::<u32>() else {
            ctx.issue(
                "strategy.response",
                format!("row key {key:?} is not an instrument-parameter id"),
            );
            ok = false;
            continue;
        };
        let mut outcomes = Vec::with_capacity(row.len());
        for c in row.chars() {
            match c {
                'G' => outcomes.push(Outcome::Green),
                'R' => outcomes.push(Outcome::Red),
                other => {
                    ctx.issue(
                        "strategy.response",
                        format!("row {id}: unexpected character {other:?}, expected G|R"),
                    );
                    ok = false;
                }
            }
        }
        rows.insert(id, outcomes);
    }
    if !ok {
        return None;
    }
    let expected: Vec<u32> = (0..rows.len() as u32).collect();
    let found: Vec<u32> = rows.keys().copied().collect();
    if found != expected {
        ctx.issue(
            "strategy.response",
            format!("row ids must be contiguous from 0, found {found:?}"),
        );
        return None;
    }
    Some(ResponseTable {
        rows: rows.into_values().collect(),
    })
}

fn build_strategy(raw: Option<RawStrategy>, ctx: &mut Ctx) -> Option<Strategy> {
    let Some(raw) = raw else {
        ctx.missing("strategy");
        return None;
    };
    let Some(kind) = raw.kind.as_deref() else {
        ctx.missing("strategy.kind");
        return None;
    };
    let name = raw.name.clone().unwrap_or_else(|| kind.to_string());
    let kind = match kind {
        "deterministic_set" => {
            let Some(sets) = &raw.sets else {
                ctx.missing("strategy.sets");
                return None;
            };
            StrategyKind::DeterministicSet {
                map: parse_sets(sets, "strategy.sets", ctx)?,
            }
        }
        "mixed_set" => StrategyKind::MixedSet,
        "bell_static" => {
            let station1 = match &raw.station1 {
                Some(s) => parse_sets(s, "strategy.station1", ctx),
                None => {
                    ctx.missing("strategy.station1");
                    None
                }
            };
            let station2 = match &raw.station2 {
                Some(s) => parse_sets(s, "strategy.station2", ctx),
                None => {
                    ctx.missing("strategy.station2");
                    None
                }
            };
            StrategyKind::BellStatic {
                station1: station1?,
                station2: station2?,
            }
        }
        "hess_philipp" => {
            let mode = raw.table_mode.as_deref().unwrap_or("periodic");
            let tables = match mode {
                "periodic" => {
                    let Some(period) = raw.period else {
                        ctx.missing("strategy.period");
                        return None;
                    };
                    if period < 1 {
                        ctx.issue("strategy.period", "period must be >= 1");
                        return None;
                    }
                    if raw.num_params.is_some() {
                        ctx.issue(
                            "strategy.num_params",
                            "num_params applies to stochastic tables only",
                        );
                    }
                    let Some(tables) = &raw.tables else {
                        ctx.missing("strategy.tables");
                        return None;
                    };
                    let Some(station1_raw) = &tables.station1 else {
                        ctx.missing("strategy.tables.station1");
                        return None;
                    };
                    let station1 =
                        build_station_tables(station1_raw, period, "strategy.tables.station1", ctx);
                    // station 2 omitted = mirror station 1
                    let station2 = match &tables.station2 {
                        Some(raw2) => {
                            build_station_tables(raw2, period, "strategy.tables.station2", ctx)
                        }
                        None => station1.clone(),
                    };
                    InstrumentTables::Periodic {
                        period: period as u32,
                        station1: station1?,
                        station2: station2?,
                    }
                }
                "stochastic" => {
                    let Some(num_params) = raw.num_params else {
                        ctx.missing("strategy.num_params");
                        return None;
                    };
                    if num_params < 1 {
                        ctx.issue("strategy.num_params", "num_params must be >= 1");
                        return None;
                    }
                    if raw.period.is_some() {
                        ctx.issue("strategy.period", "period applies to periodic tables only");
                    }
                    if raw.tables.is_some() {
                        ctx.issue("strategy.tables", "tables apply to periodic mode only");
                    }
                    InstrumentTables::Stochastic {
                        num_params: num_params as u32,
                        mirrored: raw.mirrored.unwrap_or(false),
                    }
                }
                other => {
                    ctx.issue(
                        "strategy.table_mode",
                        format!("unknown table mode {other:?}; expected periodic|stochastic"),
                    );
                    return None;
                }
            };
            let Some(response_raw) = &raw.response else {
                ctx.missing("strategy.response");
                return None;
            };
            let response = build_response_table(response_raw, ctx)?;
            StrategyKind::HessPhilipp(HessPhilippConfig { tables, response })
        }
        "quantum_reference" => {
            let defaults = QuantumReferenceTable::default();
            StrategyKind::QuantumReference(QuantumReferenceTable {
                same_setting_agree: raw.same_setting_agree.unwrap_or(defaults.same_setting_agree),
                cross_setting_agree: raw
                    .cross_setting_agree
                    .unwrap_or(defaults.cross_setting_agree),
            })
        }
        other => {
            ctx.issue("strategy.kind", format!("unknown strategy kind {other:?}"));
            return None;
        }
    };
    match Strategy::new(name, kind) {
        Ok(s) => Some(s),
        Err(e) => {
            ctx.issue("strategy", e.to_string());
            None
        }
    }
}

fn build_run(raw: Option<RawRun>, ctx: &mut Ctx) -> (Option<ScheduleKind>, Option<RawRunParts>) {
    let Some(raw) = raw else {
        ctx.missing("run");
        return (None, None);
    };
    let schedule = match raw.schedule.as_deref() {
        Some("mermin_two_pair") => Some(ScheduleKind::MerminTwoPair),
        Some("all_nine_uniform") => Some(ScheduleKind::AllNineUniform),
        Some("custom") => match &raw.entries {
            Some(entries) if !entries.is_empty() => {
                let mut parsed = Vec::with_capacity(entries.len());
                let mut ok = true;
                for (i, (tick, pair)) in entries.iter().enumerate() {
                    match pair.parse::<SettingPair>() {
                        Ok(p) => parsed.push((Tick(*tick), p)),
                        Err(e) => {
                            ctx.issue("run.entries", format!("entry {i}: {e}"));
                            ok = false;
                        }
                    }
                }
                ok.then_some(ScheduleKind::Custom { entries: parsed })
            }
            _ => {
                ctx.issue(
                    "run.entries",
                    "custom schedule requires an explicit entry list",
                );
                None
            }
        },
        Some(other) => {
            ctx.issue(
                "run.schedule",
                format!(
                    "unknown schedule {other:?}; expected mermin_two_pair|all_nine_uniform|custom"
                ),
            );
            None
        }
        None => {
            ctx.missing("run.schedule");
            None
        }
    };
    if !matches!(schedule, Some(ScheduleKind::Custom { .. })) && raw.entries.is_some() {
        ctx.issue("run.entries", "entries are only valid with schedule = \"custom\"");
    }
    let seed = match raw.seed {
        Some(s) if s >= 0 => Some(s as u64),
        Some(s) => {
            ctx.issue("run.seed", format!("seed {s} must be non-negative"));
            None
        }
        None => {
            ctx.missing("run.seed");
            None
        }
    };
    let pairs_per_setting = match raw.pairs_per_setting {
        Some(l) if l >= 1 => Some(l as u64),
        Some(l) => {
            ctx.issue("run.pairs_per_setting", format!("L = {l} must be >= 1"));
            None
        }
        None => {
            if matches!(schedule, Some(ScheduleKind::Custom { .. })) {
                Some(1)
            } else {
                ctx.missing("run.pairs_per_setting");
                None
            }
        }
    };
    let source = build_source(raw.source, ctx);
    let mut directions = BTreeMap::new();
    if let Some(raw_dirs) = &raw.directions {
        for (key, v) in raw_dirs {
            match key.parse::<Setting>() {
                Ok(setting) => match Direction::new(*v) {
                    Ok(d) => {
                        directions.insert(setting, d);
                    }
                    Err(e) => ctx.issue(&format!("run.directions.{key}"), e.to_string()),
                },
                Err(e) => ctx.issue(&format!("run.directions.{key}"), e.to_string()),
            }
        }
    }
    (
        schedule,
        Some(RawRunParts {
            pairs_per_setting,
            delayed_choice: raw.delayed_choice.unwrap_or(false),
            seed,
            clock_offsets: raw.clock_offsets.unwrap_or((0, 0)),
            source,
            directions,
        }),
    )
}

struct RawRunParts {
    pairs_per_setting: Option<u64>,
    delayed_choice: bool,
    seed: Option<u64>,
    clock_offsets: (i64, i64),
    source: Option<SourceDistribution>,
    directions: BTreeMap<Setting, Direction>,
}

fn build_report_settings(raw: Option<RawReport>, ctx: &mut Ctx) -> ReportSettings {
    let mut settings = ReportSettings::default();
    let Some(raw) = raw else {
        return settings;
    };
    if let Some(alpha) = raw.alpha {
        if alpha <= 0.0 || alpha >= 1.0 {
            ctx.issue("report.alpha", format!("alpha {alpha} outside (0, 1)"));
        } else {
            settings.alpha = alpha;
        }
    }
    if let Some(confidence) = raw.confidence {
        if confidence <= 0.0 || confidence >= 1.0 {
            ctx.issue(
                "report.confidence",
                format!("confidence {confidence} outside (0, 1)"),
            );
        } else {
            settings.confidence = confidence;
        }
    }
    match raw.independence_test.as_deref() {
        None => {}
        Some("chi_square") => settings.independence_test = IndependenceTestKind::ChiSquare,
        Some("permutation") => settings.independence_test = IndependenceTestKind::Permutation,
        Some(other) => ctx.issue(
            "report.independence_test",
            format!("unknown test {other:?}; expected chi_square|permutation"),
        ),
    }
    if let Some(shuffles) = raw.permutation_shuffles {
        if shuffles < 1 {
            ctx.issue("report.permutation_shuffles", "must be >= 1");
        } else {
            settings.permutation_shuffles = shuffles as u32;
        }
    }
    if let Some(w) = raw.pair_weights {
        if w.len() != 9 {
            ctx.issue(
                "report.pair_weights",
                format!("{} entries, expected 9 (row-major over ordered pairs)", w.len()),
            );
        } else {
            let grid = [
                [w[0], w[1], w[2]],
                [w[3], w[4], w[5]],
                [w[6], w[7], w[8]],
            ];
            match PairWeights::new(grid) {
                Ok(pw) => settings.pair_weights = Some(pw),
                Err(e) => ctx.issue("report.pair_weights", e.to_string()),
            }
        }
    }
    settings
}

fn build_oracle(raw: Option<RawOracle>, ctx: &mut Ctx) -> Option<AdversarialSearchConfig> {
    let raw = raw?;
    let t = match raw.t {
        Some(t) if t >= 1 => t as u32,
        Some(t) => {
            ctx.issue("oracle.t", format!("T = {t} must be >= 1"));
            return None;
        }
        None => {
            ctx.missing("oracle.t");
            return None;
        }
    };
    let pc_mode = match raw.pc_mode.as_deref() {
        Some("counterfactual") => PcMode::Counterfactual,
        Some("realized") => PcMode::Realized,
        Some(other) => {
            ctx.issue(
                "oracle.pc_mode",
                format!("unknown mode {other:?}; expected counterfactual|realized"),
            );
            return None;
        }
        None => {
            ctx.missing("oracle.pc_mode");
            return None;
        }
    };
    let choice_mode = match raw.choice_mode.as_deref() {
        Some("fixed_schedule") => ChoiceMode::FixedSchedule,
        Some("delayed_choice") => ChoiceMode::DelayedChoice,
        Some(other) => {
            ctx.issue(
                "oracle.choice_mode",
                format!("unknown mode {other:?}; expected fixed_schedule|delayed_choice"),
            );
            return None;
        }
        None => {
            ctx.missing("oracle.choice_mode");
            return None;
        }
    };
    let schedule = match raw.schedule {
        Some(Value::String(s)) if s == "uniform_random" => AdversarialSchedule::UniformRandom,
        Some(Value::String(other)) => {
            ctx.issue(
                "oracle.schedule",
                format!("unknown schedule {other:?}; expected uniform_random or a pair list"),
            );
            return None;
        }
        Some(Value::Array(items)) => {
            let mut pairs = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                match item.as_str().map(str::parse::<SettingPair>) {
                    Some(Ok(p)) => pairs.push(p),
                    _ => {
                        ctx.issue(
                            "oracle.schedule",
                            format!("entry {i} is not a setting pair string"),
                        );
                        return None;
                    }
                }
            }
            AdversarialSchedule::PerTick(pairs)
        }
        Some(_) => {
            ctx.issue("oracle.schedule", "expected \"uniform_random\" or a pair list");
            return None;
        }
        None => {
            ctx.missing("oracle.schedule");
            return None;
        }
    };
    let cfg = AdversarialSearchConfig {
        num_ticks: t,
        schedule,
        pc_mode,
        choice_mode,
    };
    if let Err(e) = cfg.validate() {
        ctx.issue("oracle", e.to_string());
        return None;
    }
    Some(cfg)
}

/// Parse and validate a configuration file, reporting every problem
/// found rather than the first.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let table: toml::Table = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start));
        CliError::single("(syntax)", line, e.message().to_string())
    })?;
    let raw: RawConfig = toml::Table::try_into(table.clone()).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start));
        CliError::single("(structure)", line, e.message().to_string())
    })?;

    let mut ctx = Ctx {
        src: text,
        issues: Vec::new(),
    };
    reject_unknown_keys(&table, &mut ctx);

    match raw.version {
        Some(CONFIG_VERSION) => {}
        Some(v) => ctx.issue("version", format!("unsupported version {v}, expected 1")),
        None => ctx.missing("version"),
    }

    let (schedule_kind, run_parts) = build_run(raw.run, &mut ctx);
    let strategy = build_strategy(raw.strategy, &mut ctx);
    let outputs = raw.outputs.map(|o| {
        let records = o.records.unwrap_or_else(|| {
            ctx.missing("outputs.records");
            String::new()
        });
        let report = o.report.unwrap_or_else(|| {
            ctx.missing("outputs.report");
            String::new()
        });
        Outputs {
            records: PathBuf::from(records),
            report: PathBuf::from(report),
            csv: o.csv.map(PathBuf::from),
        }
    });
    let report = build_report_settings(raw.report, &mut ctx);
    let oracle = build_oracle(raw.oracle, &mut ctx);

    // cross-field: strategy vs source alphabet
    if let (Some(strategy), Some(parts)) = (&strategy, &run_parts) {
        if let Some(source) = &parts.source {
            if let Err(e) = strategy.validate_for_alphabet(source.alphabet_size()) {
                ctx.issue("strategy", e.to_string());
            }
        }
    }

    if !ctx.issues.is_empty() {
        return Err(CliError::Config(ctx.issues));
    }

    let parts = run_parts.expect("issues empty implies run parsed");
    let run = RunConfig {
        schedule_kind: schedule_kind.expect("validated"),
        pairs_per_setting: parts.pairs_per_setting.expect("validated"),
        delayed_choice: parts.delayed_choice,
        seed: parts.seed.expect("validated"),
        source: parts.source.expect("validated"),
        strategy: strategy.expect("validated"),
        clock_offsets: parts.clock_offsets,
    };
    run.validate().map_err(|e| {
        CliError::single("run", key_line(text, "run"), e.to_string())
    })?;
    Ok(ConfigFile {
        version: CONFIG_VERSION as u32,
        run,
        directions: parts.directions,
        outputs,
        report,
        oracle,
    })
}

// ---------------------------------------------------------------------------
// rendering (canonical form; parse(render(c)) == c)
// ---------------------------------------------------------------------------

fn sets_to_strings(sets: &[InstructionSet]) -> Vec<String> {
    sets.iter().map(|s| s.to_string()).collect()
}

/// Render a validated configuration back to canonical TOML.
pub fn render(cfg: &ConfigFile) -> String {
    let mut root = toml::Table::new();
    root.insert("version".into(), Value::Integer(cfg.version as i64));

    let mut run = toml::Table::new();
    match &cfg.run.schedule_kind {
        ScheduleKind::MerminTwoPair => {
            run.insert("schedule".into(), Value::String("mermin_two_pair".into()));
        }
        ScheduleKind::AllNineUniform => {
            run.insert("schedule".into(), Value::String("all_nine_uniform".into()));
        }
        ScheduleKind::Custom { entries } => {
            run.insert("schedule".into(), Value::String("custom".into()));
            run.insert(
                "entries".into(),
                Value::Array(
                    entries
                        .iter()
                        .map(|(t, p)| {
                            Value::Array(vec![
                                Value::Integer(t.0 as i64),
                                Value::String(p.to_string()),
                            ])
                        })
                        .collect(),
                ),
            );
        }
    }
    run.insert(
        "pairs_per_setting".into(),
        Value::Integer(cfg.run.pairs_per_setting as i64),
    );
    run.insert("delayed_choice".into(), Value::Boolean(cfg.run.delayed_choice));
    run.insert("seed".into(), Value::Integer(cfg.run.seed as i64));
    run.insert(
        "clock_offsets".into(),
        Value::Array(vec![
            Value::Integer(cfg.run.clock_offsets.0),
            Value::Integer(cfg.run.clock_offsets.1),
        ]),
    );
    let mut source = toml::Table::new();
    source.insert("kind".into(), Value::String("weights".into()));
    source.insert(
        "weights".into(),
        Value::Array(
            cfg.run
                .source
                .weights()
                .iter()
                .map(|w| Value::Float(*w))
                .collect(),
        ),
    );
    run.insert("source".into(), Value::Table(source));
    if !cfg.directions.is_empty() {
        let mut dirs = toml::Table::new();
        for (setting, d) in &cfg.directions {
            dirs.insert(
                setting.to_string(),
                Value::Array(d.components().iter().map(|c| Value::Float(*c)).collect()),
            );
        }
        run.insert("directions".into(), Value::Table(dirs));
    }
    root.insert("run".into(), Value::Table(run));

    let mut strategy = toml::Table::new();
    strategy.insert("name".into(), Value::String(cfg.run.strategy.name.clone()));
    match cfg.run.strategy.kind() {
        StrategyKind::DeterministicSet { map } => {
            strategy.insert("kind".into(), Value::String("deterministic_set".into()));
            strategy.insert(
                "sets".into(),
                Value::Array(sets_to_strings(map).into_iter().map(Value::String).collect()),
            );
        }
        StrategyKind::MixedSet => {
            strategy.insert("kind".into(), Value::String("mixed_set".into()));
        }
        StrategyKind::BellStatic { station1, station2 } => {
            strategy.insert("kind".into(), Value::String("bell_static".into()));
            for (key, sets) in [("station1", station1), ("station2", station2)] {
                strategy.insert(
                    key.into(),
                    Value::Array(
                        sets_to_strings(sets).into_iter().map(Value::String).collect(),
                    ),
                );
            }
        }
        StrategyKind::HessPhilipp(hp) => {
            strategy.insert("kind".into(), Value::String("hess_philipp".into()));
            match &hp.tables {
                InstrumentTables::Periodic {
                    period,
                    station1,
                    station2,
                } => {
                    strategy.insert("table_mode".into(), Value::String("periodic".into()));
                    strategy.insert("period".into(), Value::Integer(*period as i64));
                    let mut tables = toml::Table::new();
                    for (key, cols) in [("station1", station1), ("station2", station2)] {
                        let mut t = toml::Table::new();
                        for (i, col) in cols.iter().enumerate() {
                            t.insert(
                                (i + 1).to_string(),
                                Value::Array(
                                    col.iter().map(|v| Value::Integer(*v as i64)).collect(),
                                ),
                            );
                        }
                        tables.insert(key.into(), Value::Table(t));
                    }
                    strategy.insert("tables".into(), Value::Table(tables));
                }
                InstrumentTables::Stochastic {
                    num_params,
                    mirrored,
                } => {
                    strategy.insert("table_mode".into(), Value::String("stochastic".into()));
                    strategy.insert("num_params".into(), Value::Integer(*num_params as i64));
                    strategy.insert("mirrored".into(), Value::Boolean(*mirrored));
                }
            }
            let mut response = toml::Table::new();
            for (id, row) in hp.response.rows.iter().enumerate() {
                let rendered: String = row.iter().map(ToString::to_string).collect();
                response.insert(id.to_string(), Value::String(rendered));
            }
            strategy.insert("response".into(), Value::Table(response));
        }
        StrategyKind::QuantumReference(t) => {
            strategy.insert("kind".into(), Value::String("quantum_reference".into()));
            strategy.insert("same_setting_agree".into(), Value::Float(t.same_setting_agree));
            strategy.insert(
                "cross_setting_agree".into(),
                Value::Float(t.cross_setting_agree),
            );
        }
    }
    root.insert("strategy".into(), Value::Table(strategy));

    if let Some(outputs) = &cfg.outputs {
        let mut o = toml::Table::new();
        o.insert(
            "records".into(),
            Value::String(outputs.records.display().to_string()),
        );
        o.insert(
            "report".into(),
            Value::String(outputs.report.display().to_string()),
        );
        if let Some(csv) = &outputs.csv {
            o.insert("csv".into(), Value::String(csv.display().to_string()));
        }
        root.insert("outputs".into(), Value::Table(o));
    }

    let mut report = toml::Table::new();
    report.insert("alpha".into(), Value::Float(cfg.report.alpha));
    report.insert("confidence".into(), Value::Float(cfg.report.confidence));
    report.insert(
        "independence_test".into(),
        Value::String(
            match cfg.report.independence_test {
                IndependenceTestKind::ChiSquare => "chi_square",
                IndependenceTestKind::Permutation => "permutation",
            }
            .into(),
        ),
    );
    report.insert(
        "permutation_shuffles".into(),
        Value::Integer(cfg.report.permutation_shuffles as i64),
    );
    if let Some(pw) = &cfg.report.pair_weights {
        report.insert(
            "pair_weights".into(),
            Value::Array(
                SettingPair::all()
                    .map(|p| Value::Float(pw.get(p)))
                    .collect(),
            ),
        );
    }
    root.insert("report".into(), Value::Table(report));

    if let Some(oracle) = &cfg.oracle {
        let mut o = toml::Table::new();
        o.insert("t".into(), Value::Integer(oracle.num_ticks as i64));
        match &oracle.schedule {
            AdversarialSchedule::UniformRandom => {
                o.insert("schedule".into(), Value::String("uniform_random".into()));
            }
            AdversarialSchedule::PerTick(pairs) => {
                o.insert(
                    "schedule".into(),
                    Value::Array(
                        pairs.iter().map(|p| Value::String(p.to_string())).collect(),
                    ),
                );
            }
        }
        o.insert(
            "pc_mode".into(),
            Value::String(
                match oracle.pc_mode {
                    PcMode::Counterfactual => "counterfactual",
                    PcMode::Realized => "realized",
                }
                .into(),
            ),
        );
        o.insert(
            "choice_mode".into(),
            Value::String(
                match oracle.choice_mode {
                    ChoiceMode::FixedSchedule => "fixed_schedule",
                    ChoiceMode::DelayedChoice => "delayed_choice",
                }
                .into(),
            ),
        );
        root.insert("oracle".into(), Value::Table(o));
    }

    toml::to_string(&Value::Table(root)).expect("canonical config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1

[run]
schedule = "mermin_two_pair"
pairs_per_setting = 10
seed = 1

[run.source]
kind = "uniform"
k = 8

[strategy]
kind = "deterministic_set"
sets = ["GGR"]
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.version, 1);
        assert_eq!(cfg.run.pairs_per_setting, 10);
        assert_eq!(cfg.run.seed, 1);
        assert!(!cfg.run.delayed_choice);
        assert_eq!(cfg.run.clock_offsets, (0, 0));
        assert_eq!(cfg.run.strategy.name, "deterministic_set");
        assert!(cfg.outputs.is_none());
        assert_eq!(cfg.report, ReportSettings::default());
    }

    fn issues(text: &str) -> Vec<ConfigIssue> {
        match parse_config(text) {
            Err(CliError::Config(issues)) => issues,
            other => panic!("expected config issues, got {other:?}"),
        }
    }

    #[test]
    fn source_weights_sum_error_names_the_field() {
        let text = MINIMAL.replace(
            "kind = \"uniform\"\nk = 8",
            "kind = \"weights\"\nweights = [0.5, 0.4]",
        );
        let issues = issues(&text);
        assert_eq!(issues.len(), 1, "{issues:?}");
        assert_eq!(issues[0].path, "run.source.weights");
        assert!(issues[0].message.contains("sum"));
        assert_eq!(issues[0].line, Some(11), "{issues:?}");
    }

    #[test]
    fn pair_weights_sum_error_names_the_field() {
        let text = format!("{MINIMAL}\n[report]\npair_weights = [0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]\n");
        let issues = issues(&text);
        assert_eq!(issues.len(), 1, "{issues:?}");
        assert_eq!(issues[0].path, "report.pair_weights");
        assert!(issues[0].message.contains("sum"));
    }

    #[test]
    fn realized_delayed_oracle_is_a_cross_field_error() {
        let text = format!(
            "{MINIMAL}\n[oracle]\nt = 3\nschedule = \"uniform_random\"\npc_mode = \"realized\"\nchoice_mode = \"delayed_choice\"\n"
        );
        let issues = issues(&text);
        assert_eq!(issues.len(), 1, "{issues:?}");
        assert_eq!(issues[0].path, "oracle");
        assert!(issues[0].message.contains("realized"));
    }

    #[test]
    fn unknown_keys_are_all_reported() {
        let text = format!(
            "bogus = 1\n{MINIMAL}\nstray = 2\n[outputs]\nrecords = \"r\"\nreport = \"p\"\nextra_key = 2\n"
        );
        let issues = issues(&text);
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"bogus"), "{paths:?}");
        assert!(paths.contains(&"strategy.stray"), "{paths:?}");
        assert!(paths.contains(&"outputs.extra_key"), "{paths:?}");
        assert_eq!(issues.len(), 3);
    }

    #[test]
    fn wrong_kind_keys_are_unknown() {
        let text = MINIMAL.replace(
            "kind = \"deterministic_set\"\nsets = [\"GGR\"]",
            "kind = \"mixed_set\"\nsets = [\"GGR\"]",
        );
        let issues = issues(&text);
        assert!(issues.iter().any(|i| i.path == "strategy.sets"), "{issues:?}");
    }

    #[test]
    fn missing_fields_are_all_reported() {
        let text = "version = 1\n\n[run]\nschedule = \"mermin_two_pair\"\n\n[strategy]\nkind = \"mixed_set\"\n";
        let issues = issues(text);
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"run.pairs_per_setting"), "{paths:?}");
        assert!(paths.contains(&"run.seed"), "{paths:?}");
        assert!(paths.contains(&"run.source"), "{paths:?}");
    }

    #[test]
    fn custom_schedule_requires_entries() {
        let text = MINIMAL.replace("schedule = \"mermin_two_pair\"", "schedule = \"custom\"");
        let issues = issues(&text);
        assert!(issues.iter().any(|i| i.path == "run.entries"), "{issues:?}");
    }

    #[test]
    fn entries_forbidden_outside_custom() {
        let text = MINIMAL.replace(
            "pairs_per_setting = 10",
            "pairs_per_setting = 10\nentries = [[0, \"11\"]]",
        );
        let issues = issues(&text);
        assert!(issues.iter().any(|i| i.path == "run.entries"), "{issues:?}");
    }

    #[test]
    fn mixed_set_with_wrong_alphabet_is_cross_field() {
        let text = MINIMAL
            .replace("k = 8", "k = 4")
            .replace(
                "kind = \"deterministic_set\"\nsets = [\"GGR\"]",
                "kind = \"mixed_set\"",
            );
        let issues = issues(&text);
        assert!(issues.iter().any(|i| i.path == "strategy"), "{issues:?}");
    }

    #[test]
    fn version_must_be_one() {
        let text = MINIMAL.replace("version = 1", "version = 2");
        let issues = issues(&text);
        assert!(issues.iter().any(|i| i.path == "version"));
    }

    #[test]
    fn syntax_error_carries_line() {
        let err = parse_config("version = 1\n[run\n").unwrap_err();
        match err {
            CliError::Config(issues) => {
                assert_eq!(issues[0].line, Some(2), "{issues:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn render_roundtrips_bundled_configs() {
        for path in [
            "../../configs/ggr.toml",
            "../../configs/hess_philipp_mirrored.toml",
            "../../configs/quantum_reference.toml",
            "../../configs/oracle_gap.toml",
            "../../configs/oracle_delayed.toml",
        ] {
            let text = std::fs::read_to_string(path).unwrap();
            let cfg = parse_config(&text).unwrap();
            let rendered = render(&cfg);
            let reparsed = parse_config(&rendered)
                .unwrap_or_else(|e| panic!("{path}: rendered form rejected: {e}"));
            assert_eq!(reparsed, cfg, "{path} round trip");
        }
    }

    #[test]
    fn hess_philipp_periodic_stochastic_cross_requirements() {
        let hp = |body: &str| {
            MINIMAL.replace(
                "kind = \"deterministic_set\"\nsets = [\"GGR\"]",
                body,
            )
        };
        // stochastic forbids tables/period, requires num_params
        let text = hp("kind = \"hess_philipp\"\ntable_mode = \"stochastic\"\nnum_params = 2\n[strategy.response]\n\"0\" = \"GGGGGGGG\"\n\"1\" = \"RRRRRRRR\"");
        assert!(parse_config(&text).is_ok(), "{:?}", parse_config(&text).err());
        let text = hp("kind = \"hess_philipp\"\ntable_mode = \"stochastic\"\nperiod = 2\nnum_params = 2\n[strategy.response]\n\"0\" = \"GGGGGGGG\"\n\"1\" = \"RRRRRRRR\"");
        assert!(issues(&text).iter().any(|i| i.path == "strategy.period"));
        // periodic requires period + tables
        let text = hp("kind = \"hess_philipp\"\ntable_mode = \"periodic\"\n[strategy.response]\n\"0\" = \"GGGGGGGG\"");
        assert!(issues(&text).iter().any(|i| i.path == "strategy.period"));
        // response rows must be contiguous ids
        let text = hp("kind = \"hess_philipp\"\ntable_mode = \"stochastic\"\nnum_params = 2\n[strategy.response]\n\"0\" = \"GGGGGGGG\"\n\"2\" = \"RRRRRRRR\"");
        assert!(issues(&text).iter().any(|i| i.path == "strategy.response"));
    }

    #[test]
    fn directions_validated_as_unit_vectors() {
        let text = MINIMAL.replace(
            "[strategy]",
            "[run.directions]\n\"1\" = [1.0, 0.0, 0.0]\n\n[strategy]",
        );
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.directions.len(), 1);
        let text = MINIMAL.replace(
            "[strategy]",
            "[run.directions]\n\"1\" = [1.0, 1.0, 0.0]\n\n[strategy]",
        );
        assert!(issues(&text).iter().any(|i| i.path == "run.directions.1"));
    }
}
