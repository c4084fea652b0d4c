//! Report assembly: everything the run produced, with every frequency
//! carried as integer counts next to its decimal rendering.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::Serialize;

use eprsim_core::harness::RunResult;
use eprsim_core::model::{
    ScheduleEntry, SettingPair, StationId, TrialRecord, TrialSchedule,
};
use eprsim_core::oracle::{exact_overall_from_counts, ExactPairWeights, ExactProbability};
use eprsim_core::rng::RngTree;
use eprsim_core::stats::{
    check_counterfactual_correlation, check_perfect_correlation, chi_square_independence,
    find_time_variability_witness, overall_same_color, permutation_independence, tally,
    wilson_interval, CountsMatrix, IndependenceReport, PairWeights, TimeVariabilityWitness,
};
use eprsim_core::strategies::StrategyKind;
use eprsim_core::{CoreError, Real};

use crate::config::{ConfigFile, IndependenceTestKind, ReportSettings};
use crate::error::Result;

pub const TOOL_NAME: &str = "eprsim";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairFrequency {
    pub same: u64,
    pub diff: u64,
    pub total: u64,
    pub frequency: Real,
    pub wilson_low: Real,
    pub wilson_high: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverallSameColor {
    /// Same-color count and trial total behind the decimal value.
    pub same: u64,
    pub total: u64,
    pub value: Real,
    /// Exact fraction when the weights are exact (realized
    /// proportions); absent under explicit float weights.
    pub exact: Option<ExactProbability>,
    pub weights: WeightsUsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsUsed {
    RealizedProportions,
    Configured,
}

/// Perfect-correlation checks are reported in two strictly separate
/// rows: violations on measured same-setting trials, and violations
/// found by probing all settings counterfactually. The two are never
/// merged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationSection {
    pub realized_violation_ticks: Vec<u64>,
    /// None when the strategy is nonlocal (probing undefined).
    pub counterfactual_violation_ticks: Option<Vec<u64>>,
    pub time_variability_witness: Option<WitnessSer>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessSer {
    pub tick_11: u64,
    pub tick_12: u64,
    pub setting: String,
    pub lambda: u32,
}

impl From<TimeVariabilityWitness> for WitnessSer {
    fn from(w: TimeVariabilityWitness) -> Self {
        WitnessSer {
            tick_11: w.tick_11.0,
            tick_12: w.tick_12.0,
            setting: w.setting.to_string(),
            lambda: w.lambda.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum IndependenceOutcome {
    Tested(IndependenceReport<Real>),
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceEntry {
    pub name: String,
    #[serde(flatten)]
    pub outcome: IndependenceOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    /// Expected same-color frequency for this strategy and the realized
    /// pair weights.
    pub expected: Real,
    /// Exact expectation when the strategy and source admit one.
    pub exact: Option<ExactProbability>,
    pub empirical_same: u64,
    pub empirical_total: u64,
    pub empirical: Real,
    pub abs_diff: Real,
    /// 3·sqrt(p(1−p)/N) at p = expected.
    pub three_sigma: Real,
    pub within_three_sigma: bool,
}

/// Non-rejection is never reported as a verdict of independence: the
/// tests bound the type-I rate but their power against specific
/// time-dependent alternatives is not quantified here.
pub const INDEPENDENCE_NOTE: &str =
    "failure to reject does not certify independence; test power against specific \
     alternatives is not quantified";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportStats {
    pub total_trials: u64,
    pub counts: BTreeMap<String, eprsim_core::stats::PairCounts>,
    pub per_pair: BTreeMap<String, PairFrequency>,
    pub overall_same_color: OverallSameColor,
    pub correlation: CorrelationSection,
    pub independence: Vec<IndependenceEntry>,
    pub independence_note: &'static str,
    pub oracle_comparison: Option<OracleComparison>,
    pub alpha: Real,
    pub confidence: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDocument {
    pub tool: String,
    pub tool_version: String,
    pub seed: u64,
    pub nonlocal_reference: bool,
    pub config_echo: ConfigFile,
    pub stats: ReportStats,
}

/// Rational source weights when the distribution is exactly expressible
/// (uniform or point mass); None for general float weights.
fn rational_source_weights(weights: &[f64]) -> Option<Vec<BigRational>> {
    let k = weights.len();
    if weights.iter().all(|w| *w == 1.0 / k as f64) {
        return Some(vec![
            BigRational::new(BigInt::from(1), BigInt::from(k as u64));
            k
        ]);
    }
    let ones: Vec<usize> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w == 1.0)
        .map(|(i, _)| i)
        .collect();
    if ones.len() == 1 && weights.iter().filter(|w| **w == 0.0).count() == k - 1 {
        let mut out = vec![BigRational::from(BigInt::from(0)); k];
        out[ones[0]] = BigRational::from(BigInt::from(1));
        return Some(out);
    }
    None
}

/// Exact pair weights matching the realized proportions of a counts
/// matrix.
fn realized_exact_weights(m: &CountsMatrix) -> Option<ExactPairWeights> {
    let total = m.total();
    if total == 0 {
        return None;
    }
    let mut w: [[BigRational; 3]; 3] =
        std::array::from_fn(|_| std::array::from_fn(|_| BigRational::from(BigInt::from(0))));
    for p in SettingPair::all() {
        w[p.first.index()][p.second.index()] =
            BigRational::new(BigInt::from(m.get(p).total()), BigInt::from(total));
    }
    ExactPairWeights::new(w).ok()
}

/// The realized per-station response tables of a set-based strategy,
/// per source parameter. None for time-dependent or nonlocal kinds.
fn per_lambda_sets(
    kind: &StrategyKind,
    alphabet: usize,
) -> Option<(Vec<eprsim_core::model::InstructionSet>, Vec<eprsim_core::model::InstructionSet>)> {
    use eprsim_core::model::InstructionSet;
    match kind {
        StrategyKind::DeterministicSet { map } => {
            let expand = |m: &Vec<InstructionSet>| -> Vec<InstructionSet> {
                if m.len() == 1 {
                    vec![m[0]; alphabet]
                } else {
                    m.clone()
                }
            };
            let m = expand(map);
            Some((m.clone(), m))
        }
        StrategyKind::MixedSet => {
            let sets: Vec<InstructionSet> = (0..alphabet as u8)
                .map(|i| InstructionSet::from_index(i).expect("alphabet validated to 8"))
                .collect();
            Some((sets.clone(), sets))
        }
        StrategyKind::BellStatic { station1, station2 } => {
            Some((station1.clone(), station2.clone()))
        }
        StrategyKind::HessPhilipp(_) | StrategyKind::QuantumReference(_) => None,
    }
}

/// Expected same-color frequency under exact pair weights for
/// strategies that admit a closed form.
fn expected_same_color(
    config: &ConfigFile,
    pair_weights: &ExactPairWeights,
) -> Option<(Real, Option<ExactProbability>)> {
    let kind = config.run.strategy.kind();
    if let StrategyKind::QuantumReference(table) = kind {
        let mut expected = 0.0;
        for p in SettingPair::all() {
            let w = pair_weights.get(p).to_f64()?;
            expected += w
                * if p.is_diagonal() {
                    table.same_setting_agree
                } else {
                    table.cross_setting_agree
                };
        }
        return Some((expected, None));
    }
    let alphabet = config.run.source.alphabet_size();
    let (sets1, sets2) = per_lambda_sets(kind, alphabet)?;
    let rho = rational_source_weights(config.run.source.weights());
    match rho {
        Some(rho) => {
            // exact: Σ_λ ρ(λ) Σ_pairs w(pair) [f1λ(x) = f2λ(y)]
            let mut acc = BigRational::from(BigInt::from(0));
            for ((s1, s2), w) in sets1.iter().zip(&sets2).zip(&rho) {
                let mut per_lambda = BigRational::from(BigInt::from(0));
                for p in SettingPair::all() {
                    if s1.response(p.first) == s2.response(p.second) {
                        per_lambda += pair_weights.get(p);
                    }
                }
                acc += w * per_lambda;
            }
            let exact = ExactProbability::new(acc).ok()?;
            Some((exact.to_f64(), Some(exact)))
        }
        None => {
            let mut acc = 0.0;
            for ((s1, s2), w) in sets1
                .iter()
                .zip(&sets2)
                .zip(config.run.source.weights())
            {
                let mut per_lambda = 0.0;
                for p in SettingPair::all() {
                    if s1.response(p.first) == s2.response(p.second) {
                        per_lambda += pair_weights.get(p).to_f64()?;
                    }
                }
                acc += w * per_lambda;
            }
            Some((acc, None))
        }
    }
}

fn independence_entry(
    name: &str,
    x: &[u32],
    y: &[u32],
    settings: &ReportSettings,
    tree: &RngTree,
) -> IndependenceEntry {
    let outcome = match settings.independence_test {
        IndependenceTestKind::ChiSquare => chi_square_independence(x, y, settings.alpha),
        IndependenceTestKind::Permutation => {
            permutation_independence(x, y, settings.permutation_shuffles, settings.alpha, tree)
        }
    };
    IndependenceEntry {
        name: name.to_string(),
        outcome: match outcome {
            Ok(report) => IndependenceOutcome::Tested(report),
            Err(CoreError::DegenerateInput(reason))
            | Err(CoreError::InsufficientData(reason)) => IndependenceOutcome::Skipped { reason },
            Err(e) => IndependenceOutcome::Skipped {
                reason: e.to_string(),
            },
        },
    }
}

/// Rebuild the realized schedule from records (the post-redraw
/// assignment is exactly what the records carry).
fn schedule_from_records(records: &[TrialRecord], delayed: bool) -> Result<TrialSchedule> {
    Ok(TrialSchedule::new(
        records
            .iter()
            .map(|r| ScheduleEntry {
                tick: r.tick,
                pair: r.pair,
                delayed,
            })
            .collect(),
    )?)
}

/// Assemble the full report for a completed run.
pub fn build_report(config: &ConfigFile, result: &RunResult) -> Result<ReportDocument> {
    let records = &result.records;
    let counts = tally(records);
    let settings = &config.report;
    let tree = RngTree::new(result.config_echo.seed);
    let offsets = result.config_echo.clock_offsets;

    let mut per_pair = BTreeMap::new();
    for pair in SettingPair::all() {
        let cell = counts.get(pair);
        if cell.total() == 0 {
            continue;
        }
        let (lo, hi) = wilson_interval(cell.same, cell.total(), settings.confidence)?;
        per_pair.insert(
            pair.to_string(),
            PairFrequency {
                same: cell.same,
                diff: cell.diff,
                total: cell.total(),
                frequency: cell.same as Real / cell.total() as Real,
                wilson_low: lo,
                wilson_high: hi,
            },
        );
    }

    let overall = match &settings.pair_weights {
        Some(w) => OverallSameColor {
            same: counts.total_same(),
            total: counts.total(),
            value: overall_same_color(&counts, w)?,
            exact: None,
            weights: WeightsUsed::Configured,
        },
        None => {
            let w = PairWeights::<Real>::from_counts(&counts)?;
            let exact = realized_exact_weights(&counts)
                .map(|ew| exact_overall_from_counts(&counts, &ew))
                .transpose()?;
            OverallSameColor {
                same: counts.total_same(),
                total: counts.total(),
                value: overall_same_color(&counts, &w)?,
                exact,
                weights: WeightsUsed::RealizedProportions,
            }
        }
    };

    let strategy = &result.config_echo.strategy;
    let local = strategy.is_local();
    let realized_violations: Vec<u64> = check_perfect_correlation(records)
        .into_iter()
        .map(|t| t.0)
        .collect();
    let counterfactual_violations = if local {
        Some(
            check_counterfactual_correlation(strategy, records, offsets, &tree)?
                .into_iter()
                .map(|t| t.0)
                .collect::<Vec<u64>>(),
        )
    } else {
        None
    };
    let witness = if local {
        let schedule = schedule_from_records(records, result.config_echo.delayed_choice)?;
        let mut found = None;
        for lam in result.config_echo.source.support() {
            if let Some(w) =
                find_time_variability_witness(strategy, &schedule, lam, offsets.0, &tree)?
            {
                found = Some(w.into());
                break;
            }
        }
        found
    } else {
        None
    };

    let lambda_trace: Vec<u32> = result.trace.lambda_ids();
    let mut independence = vec![
        independence_entry(
            "lambda_vs_iparam1",
            &lambda_trace,
            &result.trace.iparam_ids(StationId::Station1),
            settings,
            &tree,
        ),
        independence_entry(
            "lambda_vs_iparam2",
            &lambda_trace,
            &result.trace.iparam_ids(StationId::Station2),
            settings,
            &tree,
        ),
    ];
    if result.config_echo.delayed_choice {
        let pair_trace: Vec<u32> = records
            .iter()
            .map(|r| (r.pair.first.index() * 3 + r.pair.second.index()) as u32)
            .collect();
        independence.push(independence_entry(
            "lambda_vs_pair",
            &lambda_trace,
            &pair_trace,
            settings,
            &tree,
        ));
    }

    let oracle_comparison = realized_exact_weights(&counts)
        .and_then(|w| expected_same_color(config, &w))
        .map(|(expected, exact)| {
            let empirical = counts.total_same() as Real / counts.total() as Real;
            let n = counts.total() as Real;
            let three_sigma = 3.0 * (expected * (1.0 - expected) / n).sqrt();
            OracleComparison {
                expected,
                exact,
                empirical_same: counts.total_same(),
                empirical_total: counts.total(),
                empirical,
                abs_diff: (empirical - expected).abs(),
                three_sigma,
                within_three_sigma: (empirical - expected).abs() <= three_sigma,
            }
        });

    Ok(ReportDocument {
        tool: TOOL_NAME.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        seed: result.config_echo.seed,
        nonlocal_reference: !local,
        config_echo: config.clone(),
        stats: ReportStats {
            total_trials: counts.total(),
            counts: counts.as_map(),
            per_pair,
            overall_same_color: overall,
            correlation: CorrelationSection {
                realized_violation_ticks: realized_violations,
                counterfactual_violation_ticks: counterfactual_violations,
                time_variability_witness: witness,
            },
            independence,
            independence_note: INDEPENDENCE_NOTE,
            oracle_comparison,
            alpha: settings.alpha,
            confidence: settings.confidence,
        },
    })
}
