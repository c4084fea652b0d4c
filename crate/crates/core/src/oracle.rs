//! Exact combinatorial computations on arbitrary-precision rationals:
//! the classic instruction-set bound and the adversarial minimum
//! same-color frequency over time-dependent deterministic strategies.
//!
//! Floating point never enters this module; results are exported as
//! reduced numerator/denominator pairs.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::error::{CoreError, Result};
use crate::model::{InstructionSet, SettingPair, TrialRecord};
use crate::stats::CountsMatrix;

/// A probability held exactly: reduced fraction in [0, 1].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExactProbability(BigRational);

impl ExactProbability {
    pub fn new(value: BigRational) -> Result<Self> {
        if value.is_negative() || value > BigRational::one() {
            return Err(CoreError::Config(format!(
                "probability {value} outside [0, 1]"
            )));
        }
        Ok(ExactProbability(value))
    }

    pub fn from_ratio(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(CoreError::Config("zero denominator".into()));
        }
        Self::new(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn ratio(&self) -> &BigRational {
        &self.0
    }

    pub fn numerator(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denominator(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().expect("probability fits in f64")
    }
}

impl std::fmt::Display for ExactProbability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl Serialize for ExactProbability {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = ser.serialize_struct("ExactProbability", 3)?;
        s.serialize_field("numerator", &self.numerator().to_string())?;
        s.serialize_field("denominator", &self.denominator().to_string())?;
        s.serialize_field("decimal", &self.to_f64())?;
        s.end()
    }
}

/// Exact probability vector over the nine ordered setting pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPairWeights {
    weights: [[BigRational; 3]; 3],
}

impl ExactPairWeights {
    pub fn new(weights: [[BigRational; 3]; 3]) -> Result<Self> {
        let mut sum = BigRational::zero();
        for row in &weights {
            for w in row {
                if w.is_negative() {
                    return Err(CoreError::Config(format!("negative pair weight {w}")));
                }
                sum += w;
            }
        }
        if sum != BigRational::one() {
            return Err(CoreError::Config(format!(
                "pair weights sum to {sum}, expected exactly 1"
            )));
        }
        Ok(ExactPairWeights { weights })
    }

    pub fn uniform() -> Self {
        let w = BigRational::new(BigInt::one(), BigInt::from(9));
        ExactPairWeights {
            weights: std::array::from_fn(|_| std::array::from_fn(|_| w.clone())),
        }
    }

    /// All the mass on one pair.
    pub fn point(pair: SettingPair) -> Self {
        let mut weights: [[BigRational; 3]; 3] =
            std::array::from_fn(|_| std::array::from_fn(|_| BigRational::zero()));
        weights[pair.first.index()][pair.second.index()] = BigRational::one();
        ExactPairWeights { weights }
    }

    pub fn get(&self, pair: SettingPair) -> &BigRational {
        &self.weights[pair.first.index()][pair.second.index()]
    }
}

/// All eight instruction sets in canonical index order.
pub fn enumerate_instruction_sets() -> Vec<InstructionSet> {
    InstructionSet::all().collect()
}

/// Probability that both stations flash the same color when they share
/// `set` and the pair of settings is drawn from `weights`.
pub fn exact_same_color(set: InstructionSet, weights: &ExactPairWeights) -> ExactProbability {
    let mut acc = BigRational::zero();
    for pair in SettingPair::all() {
        if set.response(pair.first) == set.response(pair.second) {
            acc += weights.get(pair);
        }
    }
    ExactProbability::new(acc).expect("convex combination of indicators")
}

/// Minimum of [`exact_same_color`] over the eight sets; ties break to
/// the lowest index.
pub fn min_same_color_classic(weights: &ExactPairWeights) -> (ExactProbability, InstructionSet) {
    enumerate_instruction_sets()
        .into_iter()
        .map(|set| (exact_same_color(set, weights), set))
        .min_by(|(a, sa), (b, sb)| a.cmp(b).then(sa.index().cmp(&sb.index())))
        .expect("eight candidates")
}

/// Exact expected same-color probability of a Λ-mixture of shared
/// instruction sets: Σ_λ ρ(λ) · exact_same_color(sets[λ]).
pub fn exact_mixture_same_color(
    sets: &[InstructionSet],
    lambda_weights: &[BigRational],
    pair_weights: &ExactPairWeights,
) -> Result<ExactProbability> {
    if sets.len() != lambda_weights.len() {
        return Err(CoreError::Config(format!(
            "{} sets vs {} lambda weights",
            sets.len(),
            lambda_weights.len()
        )));
    }
    let total: BigRational = lambda_weights.iter().cloned().sum();
    if total != BigRational::one() {
        return Err(CoreError::Config(format!(
            "lambda weights sum to {total}, expected exactly 1"
        )));
    }
    let mut acc = BigRational::zero();
    for (set, w) in sets.iter().zip(lambda_weights) {
        acc += w * exact_same_color(*set, pair_weights).ratio();
    }
    ExactProbability::new(acc)
}

/// Exact weighted same-color frequency from integer counts:
/// Σ w(pair) · same/(same+diff) as a rational.
pub fn exact_overall_from_counts(
    m: &CountsMatrix,
    weights: &ExactPairWeights,
) -> Result<ExactProbability> {
    let mut acc = BigRational::zero();
    for pair in SettingPair::all() {
        let w = weights.get(pair);
        if w.is_zero() {
            continue;
        }
        let cell = m.get(pair);
        if cell.total() == 0 {
            return Err(CoreError::InsufficientData(format!(
                "pair {pair} has weight {w} but no observations"
            )));
        }
        acc += w * BigRational::new(BigInt::from(cell.same), BigInt::from(cell.total()));
    }
    ExactProbability::new(acc)
}

/// Exact realized same-color frequency of a record list.
pub fn exact_realized_same_color(records: &[TrialRecord]) -> Result<ExactProbability> {
    if records.is_empty() {
        return Err(CoreError::Empty("no records".into()));
    }
    let same = records.iter().filter(|r| r.same_color()).count();
    ExactProbability::from_ratio(same as u64, records.len() as u64)
}

/// Whether perfect correlation is imposed for every setting at every
/// tick (counterfactual) or only on the same-setting trials actually
/// scheduled (realized).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PcMode {
    Counterfactual,
    Realized,
}

/// Whether the adversary faces the scheduled pairs or fresh uniform
/// pairs drawn after emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceMode {
    FixedSchedule,
    DelayedChoice,
}

/// Per-tick pair assignment for the adversarial search.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialSchedule {
    PerTick(Vec<SettingPair>),
    UniformRandom,
}

/// Configuration of the adversarial minimum search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversarialSearchConfig {
    pub num_ticks: u32,
    pub schedule: AdversarialSchedule,
    pub pc_mode: PcMode,
    pub choice_mode: ChoiceMode,
}

impl AdversarialSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_ticks < 1 {
            return Err(CoreError::Config("adversarial search needs T >= 1".into()));
        }
        if self.pc_mode == PcMode::Realized && self.choice_mode == ChoiceMode::DelayedChoice {
            return Err(CoreError::Config(
                "realized perfect-correlation constraints are undefined before settings \
                 exist; use pc_mode = counterfactual with delayed choice"
                    .into(),
            ));
        }
        match (&self.schedule, self.choice_mode) {
            (AdversarialSchedule::PerTick(pairs), ChoiceMode::FixedSchedule) => {
                if pairs.len() != self.num_ticks as usize {
                    return Err(CoreError::Config(format!(
                        "schedule lists {} pairs for {} ticks",
                        pairs.len(),
                        self.num_ticks
                    )));
                }
            }
            (AdversarialSchedule::UniformRandom, ChoiceMode::FixedSchedule) => {
                return Err(CoreError::Config(
                    "a fixed schedule requires explicit per-tick pairs".into(),
                ));
            }
            (AdversarialSchedule::PerTick(_), ChoiceMode::DelayedChoice) => {
                return Err(CoreError::Config(
                    "delayed choice draws pairs uniformly; use schedule = uniform_random"
                        .into(),
                ));
            }
            (AdversarialSchedule::UniformRandom, ChoiceMode::DelayedChoice) => {}
        }
        Ok(())
    }
}

/// Objective contribution of one tick given the station maps there.
fn tick_value(
    f1: InstructionSet,
    f2: InstructionSet,
    scheduled: Option<SettingPair>,
) -> BigRational {
    match scheduled {
        // fixed schedule: the indicator of agreement on the one
        // scheduled pair
        Some(pair) => {
            if f1.response(pair.first) == f2.response(pair.second) {
                BigRational::one()
            } else {
                BigRational::zero()
            }
        }
        // delayed choice: expectation over uniform independent pairs
        None => {
            let agreeing = SettingPair::all()
                .filter(|p| f1.response(p.first) == f2.response(p.second))
                .count();
            BigRational::new(BigInt::from(agreeing), BigInt::from(9))
        }
    }
}

/// Whether (f1, f2) is admissible at a tick under the constraint mode.
fn tick_admissible(
    f1: InstructionSet,
    f2: InstructionSet,
    pc_mode: PcMode,
    scheduled: Option<SettingPair>,
) -> bool {
    match pc_mode {
        // counterfactual: the stations must agree at every setting
        PcMode::Counterfactual => f1 == f2,
        // realized: agreement is only forced where a same-setting
        // trial is actually scheduled at this tick
        PcMode::Realized => match scheduled {
            Some(pair) if pair.is_diagonal() => {
                f1.response(pair.first) == f2.response(pair.first)
            }
            _ => true,
        },
    }
}

/// Exact minimum same-color frequency over time-dependent deterministic
/// strategies f_station(setting, tick).
///
/// Trials at distinct ticks are independently programmable, so the
/// global minimum decomposes into per-tick minima; each tick is an
/// exhaustive search over the 64 station-map pairs (8 under the
/// counterfactual constraint).
pub fn adversarial_min(cfg: &AdversarialSearchConfig) -> Result<ExactProbability> {
    cfg.validate()?;
    let t = cfg.num_ticks as usize;
    let mut acc = BigRational::zero();
    for i in 0..t {
        let scheduled = match (&cfg.schedule, cfg.choice_mode) {
            (AdversarialSchedule::PerTick(pairs), ChoiceMode::FixedSchedule) => Some(pairs[i]),
            _ => None,
        };
        let minimum = InstructionSet::all()
            .flat_map(|f1| InstructionSet::all().map(move |f2| (f1, f2)))
            .filter(|(f1, f2)| tick_admissible(*f1, *f2, cfg.pc_mode, scheduled))
            .map(|(f1, f2)| tick_value(f1, f2, scheduled))
            .min()
            .expect("the shared-set family is always admissible");
        acc += minimum;
    }
    ExactProbability::new(acc / BigRational::from(BigInt::from(t as u64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Setting;

    fn pair(s: &str) -> SettingPair {
        s.parse().unwrap()
    }

    #[test]
    fn enumerates_all_eight_sets() {
        let sets = enumerate_instruction_sets();
        assert_eq!(sets.len(), 8);
        let rendered: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        assert!(rendered.contains(&"GGR".to_string()));
        assert!(rendered.contains(&"GGG".to_string()));
        assert!(rendered.contains(&"RRR".to_string()));
        for (i, s) in sets.iter().enumerate() {
            assert_eq!(s.index() as usize, i);
        }
    }

    #[test]
    fn exact_same_color_ggr_uniform_is_five_ninths() {
        let ggr: InstructionSet = "GGR".parse().unwrap();
        let p = exact_same_color(ggr, &ExactPairWeights::uniform());
        assert_eq!(p, ExactProbability::from_ratio(5, 9).unwrap());
    }

    #[test]
    fn exact_same_color_constant_set_is_one() {
        let ggg: InstructionSet = "GGG".parse().unwrap();
        let p = exact_same_color(ggg, &ExactPairWeights::uniform());
        assert_eq!(p, ExactProbability::from_ratio(1, 1).unwrap());
    }

    #[test]
    fn exact_same_color_point_weight_disagreeing_pair_is_zero() {
        let ggr: InstructionSet = "GGR".parse().unwrap();
        let w = ExactPairWeights::point(pair("13"));
        assert_eq!(
            exact_same_color(ggr, &w),
            ExactProbability::from_ratio(0, 1).unwrap()
        );
    }

    #[test]
    fn classic_minimum_uniform() {
        let (min, argmin) = min_same_color_classic(&ExactPairWeights::uniform());
        assert_eq!(min, ExactProbability::from_ratio(5, 9).unwrap());
        // six non-constant sets tie at 5/9; lowest index is 1
        assert_eq!(argmin.index(), 1);
    }

    #[test]
    fn classic_minimum_diagonal_weights_is_one() {
        let third = BigRational::new(BigInt::one(), BigInt::from(3));
        let mut w: [[BigRational; 3]; 3] =
            std::array::from_fn(|_| std::array::from_fn(|_| BigRational::zero()));
        for (i, row) in w.iter_mut().enumerate() {
            row[i] = third.clone();
        }
        let (min, argmin) = min_same_color_classic(&ExactPairWeights::new(w).unwrap());
        assert_eq!(min, ExactProbability::from_ratio(1, 1).unwrap());
        assert_eq!(argmin.index(), 0);
    }

    #[test]
    fn classic_minimum_single_cross_pair_is_zero() {
        let (min, argmin) = min_same_color_classic(&ExactPairWeights::point(pair("12")));
        assert_eq!(min, ExactProbability::from_ratio(0, 1).unwrap());
        // lowest-index set with different responses at settings 1 and 2
        assert_ne!(
            argmin.response(Setting::S1),
            argmin.response(Setting::S2)
        );
        let lower_ties: Vec<u8> = (0..argmin.index())
            .filter(|i| {
                let s = InstructionSet::from_index(*i).unwrap();
                s.response(Setting::S1) != s.response(Setting::S2)
            })
            .collect();
        assert!(lower_ties.is_empty());
    }

    #[test]
    fn adversarial_all_nine_realized_fixed_is_one_third() {
        let cfg = AdversarialSearchConfig {
            num_ticks: 9,
            schedule: AdversarialSchedule::PerTick(SettingPair::all().collect()),
            pc_mode: PcMode::Realized,
            choice_mode: ChoiceMode::FixedSchedule,
        };
        assert_eq!(
            adversarial_min(&cfg).unwrap(),
            ExactProbability::from_ratio(1, 3).unwrap()
        );
    }

    #[test]
    fn adversarial_counterfactual_delayed_is_five_ninths_for_all_t() {
        for t in 1..=6 {
            let cfg = AdversarialSearchConfig {
                num_ticks: t,
                schedule: AdversarialSchedule::UniformRandom,
                pc_mode: PcMode::Counterfactual,
                choice_mode: ChoiceMode::DelayedChoice,
            };
            assert_eq!(
                adversarial_min(&cfg).unwrap(),
                ExactProbability::from_ratio(5, 9).unwrap(),
                "T = {t}"
            );
        }
    }

    #[test]
    fn adversarial_single_diagonal_trial_is_forced() {
        let cfg = AdversarialSearchConfig {
            num_ticks: 1,
            schedule: AdversarialSchedule::PerTick(vec![pair("11")]),
            pc_mode: PcMode::Realized,
            choice_mode: ChoiceMode::FixedSchedule,
        };
        assert_eq!(
            adversarial_min(&cfg).unwrap(),
            ExactProbability::from_ratio(1, 1).unwrap()
        );
    }

    #[test]
    fn adversarial_invalid_combinations() {
        let bad = AdversarialSearchConfig {
            num_ticks: 3,
            schedule: AdversarialSchedule::UniformRandom,
            pc_mode: PcMode::Realized,
            choice_mode: ChoiceMode::DelayedChoice,
        };
        assert!(matches!(
            adversarial_min(&bad).unwrap_err(),
            CoreError::Config(_)
        ));
        let bad_len = AdversarialSearchConfig {
            num_ticks: 3,
            schedule: AdversarialSchedule::PerTick(vec![pair("11")]),
            pc_mode: PcMode::Realized,
            choice_mode: ChoiceMode::FixedSchedule,
        };
        assert!(adversarial_min(&bad_len).is_err());
        let delayed_with_schedule = AdversarialSearchConfig {
            num_ticks: 1,
            schedule: AdversarialSchedule::PerTick(vec![pair("11")]),
            pc_mode: PcMode::Counterfactual,
            choice_mode: ChoiceMode::DelayedChoice,
        };
        assert!(adversarial_min(&delayed_with_schedule).is_err());
    }

    #[test]
    fn realized_minimum_never_exceeds_counterfactual() {
        // constraint relaxation, spot-checked on assorted schedules
        let schedules: Vec<Vec<SettingPair>> = vec![
            vec![pair("11")],
            vec![pair("12"), pair("21")],
            vec![pair("11"), pair("22"), pair("33")],
            SettingPair::all().collect(),
            vec![pair("11"), pair("12"), pair("13"), pair("11")],
        ];
        for sched in schedules {
            let t = sched.len() as u32;
            let realized = adversarial_min(&AdversarialSearchConfig {
                num_ticks: t,
                schedule: AdversarialSchedule::PerTick(sched.clone()),
                pc_mode: PcMode::Realized,
                choice_mode: ChoiceMode::FixedSchedule,
            })
            .unwrap();
            let counterfactual = adversarial_min(&AdversarialSearchConfig {
                num_ticks: t,
                schedule: AdversarialSchedule::PerTick(sched),
                pc_mode: PcMode::Counterfactual,
                choice_mode: ChoiceMode::FixedSchedule,
            })
            .unwrap();
            assert!(realized <= counterfactual);
        }
    }

    #[test]
    fn exact_probability_invariants() {
        let p = ExactProbability::from_ratio(6, 9).unwrap();
        // stored in lowest terms
        assert_eq!(p.to_string(), "2/3");
        assert!(ExactProbability::from_ratio(10, 9).is_err());
        assert!(ExactProbability::from_ratio(1, 0).is_err());
        assert_eq!(ExactProbability::from_ratio(0, 5).unwrap().to_string(), "0/1");
    }

    #[test]
    fn mixture_same_color_uniform_over_sets() {
        // uniform mixture over all eight sets: 2 constants at 1, six at 5/9
        let sets = enumerate_instruction_sets();
        let w = vec![BigRational::new(BigInt::one(), BigInt::from(8)); 8];
        let p = exact_mixture_same_color(&sets, &w, &ExactPairWeights::uniform()).unwrap();
        // (2·1 + 6·5/9) / 8 = (2 + 10/3) / 8 = 2/3
        assert_eq!(p, ExactProbability::from_ratio(2, 3).unwrap());
    }

    #[test]
    fn exact_overall_matches_counts() {
        use crate::model::Outcome;
        let set: InstructionSet = "GGR".parse().unwrap();
        let records: Vec<TrialRecord> = SettingPair::all()
            .enumerate()
            .map(|(i, p)| {
                let ip = |station, setting| crate::model::InstrumentParameter {
                    id: 0,
                    station,
                    setting,
                    tick: crate::model::Tick(i as u64),
                };
                TrialRecord {
                    tick: crate::model::Tick(i as u64),
                    pair: p,
                    lambda: crate::model::SourceParameter(0),
                    outcome1: set.response(p.first),
                    outcome2: set.response(p.second),
                    iparam1: ip(crate::model::StationId::Station1, p.first),
                    iparam2: ip(crate::model::StationId::Station2, p.second),
                    nonlocal: false,
                }
            })
            .collect();
        assert!(records
            .iter()
            .filter(|r| r.outcome1 == Outcome::Green)
            .count() > 0);
        let m = crate::stats::tally(&records);
        let from_counts =
            exact_overall_from_counts(&m, &ExactPairWeights::uniform()).unwrap();
        let direct = exact_same_color(set, &ExactPairWeights::uniform());
        assert_eq!(from_counts, direct);
        let realized = exact_realized_same_color(&records).unwrap();
        assert_eq!(realized, direct);
    }
}
