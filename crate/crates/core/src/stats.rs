//! Statistics over trial records: same-color frequencies, the
//! perfect-correlation and time-variability checks, independence tests
//! and confidence intervals.
//!
//! Everything float-valued is generic over [`Scalar`]; counts stay
//! integral so exact exports remain possible downstream.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::model::{
    Setting, SettingPair, SourceParameter, StationId, Tick, TrialRecord, TrialSchedule, SETTINGS,
};
use crate::numeric::{chi_square_cdf, inv_std_normal, Scalar};
use crate::rng::{RngTree, StreamDomain};
use crate::strategies::Strategy;

/// Same/different-color counts per ordered setting pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PairCounts {
    pub same: u64,
    pub diff: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.same + self.diff
    }
}

/// 3×3 table of per-pair counts; the sufficient statistic for every
/// frequency this crate reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CountsMatrix {
    cells: [[PairCounts; 3]; 3],
}

impl CountsMatrix {
    pub fn get(&self, pair: SettingPair) -> PairCounts {
        self.cells[pair.first.index()][pair.second.index()]
    }

    fn get_mut(&mut self, pair: SettingPair) -> &mut PairCounts {
        &mut self.cells[pair.first.index()][pair.second.index()]
    }

    pub fn total(&self) -> u64 {
        SettingPair::all().map(|p| self.get(p).total()).sum()
    }

    pub fn total_same(&self) -> u64 {
        SettingPair::all().map(|p| self.get(p).same).sum()
    }

    /// Cell-wise sum; lets parallel shards merge.
    pub fn merged(&self, other: &CountsMatrix) -> CountsMatrix {
        let mut out = *self;
        for p in SettingPair::all() {
            let o = other.get(p);
            let c = out.get_mut(p);
            c.same += o.same;
            c.diff += o.diff;
        }
        out
    }

    /// Canonical map rendering (pair string -> counts).
    pub fn as_map(&self) -> BTreeMap<String, PairCounts> {
        SettingPair::all()
            .map(|p| (p.to_string(), self.get(p)))
            .collect()
    }
}

/// Count same/different colors per pair.
pub fn tally(records: &[TrialRecord]) -> CountsMatrix {
    let mut m = CountsMatrix::default();
    for r in records {
        let cell = m.get_mut(r.pair);
        if r.same_color() {
            cell.same += 1;
        } else {
            cell.diff += 1;
        }
    }
    m
}

/// Probability vector over the nine ordered setting pairs.
/// Serializes as a row-major nine-element array.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights<T: Scalar> {
    weights: [[T; 3]; 3],
}

impl<T: Scalar + Serialize> Serialize for PairWeights<T> {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = ser.serialize_seq(Some(9))?;
        for row in &self.weights {
            for w in row {
                seq.serialize_element(w)?;
            }
        }
        seq.end()
    }
}

impl<T: Scalar> PairWeights<T> {
    pub fn new(weights: [[T; 3]; 3]) -> Result<Self> {
        let mut sum = T::zero();
        for row in &weights {
            for w in row {
                if *w < T::zero() || !w.is_finite() {
                    return Err(CoreError::Config(format!("invalid pair weight {w:?}")));
                }
                sum = sum + *w;
            }
        }
        let tol = T::from_f64_lossy(1e-9).max(T::epsilon().sqrt());
        if (sum - T::one()).abs() > tol {
            return Err(CoreError::Config(format!(
                "pair weights sum to {sum:?}, expected 1"
            )));
        }
        Ok(PairWeights { weights })
    }

    pub fn uniform() -> Self {
        let w = T::from_f64_lossy(1.0 / 9.0);
        PairWeights {
            weights: [[w; 3]; 3],
        }
    }

    /// Weights proportional to observed pair counts.
    pub fn from_counts(m: &CountsMatrix) -> Result<Self> {
        let total = m.total();
        if total == 0 {
            return Err(CoreError::Empty("no records to derive weights from".into()));
        }
        let mut weights = [[T::zero(); 3]; 3];
        for p in SettingPair::all() {
            weights[p.first.index()][p.second.index()] =
                T::from_u64_lossy(m.get(p).total()) / T::from_u64_lossy(total);
        }
        Ok(PairWeights { weights })
    }

    pub fn get(&self, pair: SettingPair) -> T {
        self.weights[pair.first.index()][pair.second.index()]
    }
}

/// Weighted same-color frequency: Σ w(pair) · same/(same + diff).
///
/// Positive weight on a pair that was never observed is an error;
/// imputing a value there would silently bias any bound comparison.
pub fn overall_same_color<T: Scalar>(m: &CountsMatrix, weights: &PairWeights<T>) -> Result<T> {
    let mut acc = T::zero();
    for pair in SettingPair::all() {
        let w = weights.get(pair);
        if w == T::zero() {
            continue;
        }
        let cell = m.get(pair);
        if cell.total() == 0 {
            return Err(CoreError::InsufficientData(format!(
                "pair {pair} has weight {w:?} but no observations"
            )));
        }
        acc = acc + w * T::from_u64_lossy(cell.same) / T::from_u64_lossy(cell.total());
    }
    Ok(acc)
}

/// Ticks whose trial had equal settings but unequal colors: the
/// realized-trial violations of the perfect-correlation constraint.
pub fn check_perfect_correlation(records: &[TrialRecord]) -> Vec<Tick> {
    records
        .iter()
        .filter(|r| r.pair.is_diagonal() && !r.same_color())
        .map(|r| r.tick)
        .collect()
}

/// Ticks at which the two stations' counterfactual response maps
/// differ, probed at each realized (tick, Λ). The counterfactual
/// counterpart of [`check_perfect_correlation`]: it asks about all
/// settings, not just the measured ones. Local strategies only.
pub fn check_counterfactual_correlation(
    strategy: &Strategy,
    records: &[TrialRecord],
    clock_offsets: (i64, i64),
    tree: &RngTree,
) -> Result<Vec<Tick>> {
    let mut out = Vec::new();
    for r in records {
        let view1 = r.tick.offset_by(clock_offsets.0, StationId::Station1)?;
        let view2 = r.tick.offset_by(clock_offsets.1, StationId::Station2)?;
        // probe each station at its own clock view
        let (map1, _) = strategy.counterfactual_table(view1, r.lambda, tree)?;
        let (_, map2) = strategy.counterfactual_table(view2, r.lambda, tree)?;
        if map1 != map2 {
            out.push(r.tick);
        }
    }
    Ok(out)
}

/// A realized instance of time variability: the same (setting, Λ) at
/// two scheduled times with different station-1 responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimeVariabilityWitness {
    pub tick_11: Tick,
    pub tick_12: Tick,
    pub setting: Setting,
    pub lambda: SourceParameter,
}

/// Search the schedule's (1,1)-trials against its (1,2)-trials for a
/// setting and fixed Λ where station 1 answers differently at the two
/// times. Returns the first witness in (tick_11, tick_12, setting)
/// lexicographic order.
///
/// Runs in time linear in the schedule: for each setting the earliest
/// green and red (1,2)-ticks are precomputed, so each (1,1)-tick needs
/// one lookup instead of a scan.
pub fn find_time_variability_witness(
    strategy: &Strategy,
    schedule: &TrialSchedule,
    lam: SourceParameter,
    station1_offset: i64,
    tree: &RngTree,
) -> Result<Option<TimeVariabilityWitness>> {
    if !strategy.is_local() {
        return Err(CoreError::Contract(
            "time-variability probing is defined for local strategies only".into(),
        ));
    }
    let pair11: SettingPair = "11".parse().expect("literal");
    let pair12: SettingPair = "12".parse().expect("literal");
    let ticks_of = |pair: SettingPair| -> Vec<Tick> {
        schedule
            .entries()
            .iter()
            .filter(|e| e.pair == pair)
            .map(|e| e.tick)
            .collect()
    };
    let probe = |x: Setting, t: Tick| -> Result<crate::model::Outcome> {
        let view = t.offset_by(station1_offset, StationId::Station1)?;
        Ok(strategy
            .respond(StationId::Station1, x, lam, view, tree)?
            .0)
    };
    // earliest (1,2)-tick showing each color, per setting
    let mut first_of: [[Option<Tick>; 2]; 3] = [[None; 2]; 3];
    for t2 in ticks_of(pair12) {
        for x in SETTINGS {
            let slot = match probe(x, t2)? {
                crate::model::Outcome::Green => 0,
                crate::model::Outcome::Red => 1,
            };
            first_of[x.index()][slot].get_or_insert(t2);
        }
        if first_of.iter().all(|s| s[0].is_some() && s[1].is_some()) {
            break;
        }
    }
    for t1 in ticks_of(pair11) {
        // the earliest t2 disagreeing with this t1 at any setting;
        // ties break to the lowest setting index
        let mut best: Option<(Tick, Setting)> = None;
        for x in SETTINGS {
            let opposite = match probe(x, t1)? {
                crate::model::Outcome::Green => 1,
                crate::model::Outcome::Red => 0,
            };
            if let Some(t2) = first_of[x.index()][opposite] {
                if best.is_none_or(|(bt, _)| t2 < bt) {
                    best = Some((t2, x));
                }
            }
        }
        if let Some((t2, x)) = best {
            return Ok(Some(TimeVariabilityWitness {
                tick_11: t1,
                tick_12: t2,
                setting: x,
                lambda: lam,
            }));
        }
    }
    Ok(None)
}

/// Result of an independence test on two categorical traces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceReport<T: Scalar + Serialize> {
    pub statistic: T,
    pub dof: usize,
    pub p_value: T,
    /// Significance level the `reject` verdict used.
    pub reject_at: T,
    pub reject: bool,
    /// Observed contingency table: rows = first trace's categories,
    /// columns = second trace's, both sorted ascending.
    pub contingency: Vec<Vec<u64>>,
    pub row_categories: Vec<u32>,
    pub col_categories: Vec<u32>,
}

struct Contingency {
    table: Vec<Vec<u64>>,
    rows: Vec<u32>,
    cols: Vec<u32>,
    n: u64,
}

fn contingency(x: &[u32], y: &[u32]) -> Result<Contingency> {
    if x.len() != y.len() {
        return Err(CoreError::Config(format!(
            "trace lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let mut rows: Vec<u32> = x.to_vec();
    rows.sort_unstable();
    rows.dedup();
    let mut cols: Vec<u32> = y.to_vec();
    cols.sort_unstable();
    cols.dedup();
    if rows.len() < 2 || cols.len() < 2 {
        return Err(CoreError::DegenerateInput(format!(
            "independence needs >= 2 observed categories per variable, got {} and {}",
            rows.len(),
            cols.len()
        )));
    }
    let mut table = vec![vec![0u64; cols.len()]; rows.len()];
    for (a, b) in x.iter().zip(y) {
        let i = rows.binary_search(a).expect("category present");
        let j = cols.binary_search(b).expect("category present");
        table[i][j] += 1;
    }
    Ok(Contingency {
        table,
        rows,
        cols,
        n: x.len() as u64,
    })
}

/// Pearson statistic, summed over cells in a canonical order so the
/// result is bit-identical under argument transposition.
fn pearson_statistic<T: Scalar>(c: &Contingency) -> T {
    let row_sums: Vec<u64> = c.table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..c.cols.len())
        .map(|j| c.table.iter().map(|r| r[j]).sum())
        .collect();
    let n = T::from_u64_lossy(c.n);
    let mut terms: Vec<T> = Vec::with_capacity(c.rows.len() * c.cols.len());
    for (i, row) in c.table.iter().enumerate() {
        for (j, obs) in row.iter().enumerate() {
            let expected = T::from_u64_lossy(row_sums[i]) * T::from_u64_lossy(col_sums[j]) / n;
            let d = T::from_u64_lossy(*obs) - expected;
            terms.push(d * d / expected);
        }
    }
    terms.sort_by(|a, b| a.partial_cmp(b).expect("finite terms"));
    terms.into_iter().fold(T::zero(), |acc, t| acc + t)
}

/// Pearson chi-square test of independence between two equally long
/// categorical traces.
pub fn chi_square_independence<T: Scalar + Serialize>(
    x: &[u32],
    y: &[u32],
    alpha: T,
) -> Result<IndependenceReport<T>> {
    let c = contingency(x, y)?;
    let cells = (c.rows.len() * c.cols.len()) as u64;
    if c.n < 5 * cells {
        return Err(CoreError::InsufficientData(format!(
            "{} observations for {} cells; need at least {}",
            c.n,
            cells,
            5 * cells
        )));
    }
    let statistic = pearson_statistic::<T>(&c);
    let dof = (c.rows.len() - 1) * (c.cols.len() - 1);
    let p_value = T::one() - chi_square_cdf(statistic, dof);
    Ok(IndependenceReport {
        statistic,
        dof,
        p_value,
        reject_at: alpha,
        reject: p_value < alpha,
        contingency: c.table,
        row_categories: c.rows,
        col_categories: c.cols,
    })
}

/// Permutation test of independence for small samples: the Pearson
/// statistic's null distribution is estimated by shuffling the second
/// trace. Seeded and deterministic.
pub fn permutation_independence<T: Scalar + Serialize>(
    x: &[u32],
    y: &[u32],
    shuffles: u32,
    alpha: T,
    tree: &RngTree,
) -> Result<IndependenceReport<T>> {
    let c = contingency(x, y)?;
    let observed = pearson_statistic::<T>(&c);
    let mut shuffled = y.to_vec();
    let mut rng = tree.stream(StreamDomain::Permutation, Tick(0), 0);
    let mut at_least = 1u64; // the observed arrangement counts
    for _ in 0..shuffles {
        shuffled.shuffle(&mut rng);
        let cp = contingency(x, &shuffled)?;
        if pearson_statistic::<T>(&cp) >= observed {
            at_least += 1;
        }
    }
    let p_value = T::from_u64_lossy(at_least) / T::from_u64_lossy(shuffles as u64 + 1);
    let dof = (c.rows.len() - 1) * (c.cols.len() - 1);
    Ok(IndependenceReport {
        statistic: observed,
        dof,
        p_value,
        reject_at: alpha,
        reject: p_value < alpha,
        contingency: c.table,
        row_categories: c.rows,
        col_categories: c.cols,
    })
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval<T: Scalar>(k: u64, n: u64, confidence: T) -> Result<(T, T)> {
    if n == 0 {
        return Err(CoreError::Config(
            "Wilson interval needs at least one trial".into(),
        ));
    }
    if k > n {
        return Err(CoreError::Config(format!(
            "successes {k} exceed trials {n}"
        )));
    }
    if confidence <= T::zero() || confidence >= T::one() {
        return Err(CoreError::Config(
            "confidence level must lie strictly inside (0, 1)".into(),
        ));
    }
    let half = T::from_f64_lossy(0.5);
    let z = inv_std_normal(half * (T::one() + confidence));
    let nf = T::from_u64_lossy(n);
    let p = T::from_u64_lossy(k) / nf;
    let z2 = z * z;
    let denom = T::one() + z2 / nf;
    let center = (p + z2 / (nf + nf)) / denom;
    let spread = z / denom
        * (p * (T::one() - p) / nf + z2 / (T::from_f64_lossy(4.0) * nf * nf)).sqrt();
    // at the boundaries the score equation has an exact root at 0 or 1
    let lo = if k == 0 { T::zero() } else { (center - spread).max(T::zero()) };
    let hi = if k == n { T::one() } else { (center + spread).min(T::one()) };
    Ok((lo, hi))
}
