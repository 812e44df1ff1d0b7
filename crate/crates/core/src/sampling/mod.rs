//! Seeded draws, Neyman allocation and total sample size for the two-phase
//! stratified design.
//!
//! Allocation follows the optimal (Neyman) rule `n_j = n * N_j s_j / sum(N_i s_i)`,
//! and the total `n` needed for a target standard error of the pooled
//! proportion is
//!
//! ```text
//!         (1/N) * (sum N_j s_j)^2
//! n = -----------------------------------
//!     N * se^2 + (1/N) * sum N_j s_j^2
//! ```

pub mod rng;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, PosClass};
use crate::estimation::normal_quantile;
pub use rng::{derive_seed, next_random, parse_seed, RandomState};

/// Slack allowed above the Bernoulli maximum of 0.5 for a stratum SD.
const SD_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("cannot draw {k} items from a population of {len}")]
    SampleTooLarge { k: usize, len: usize },
    #[error("all strata have N*sd = 0; allocation is undefined")]
    DegenerateAllocation,
    #[error("no strata given")]
    NoStrata,
    #[error("target standard error must be positive, got {0}")]
    NonPositiveTargetSe(f64),
    #[error("invalid stratum {class}: {reason}")]
    InvalidStratum { class: PosClass, reason: String },
    #[error("invalid fractions: {0}")]
    InvalidFractions(String),
    #[error("stratum {class} has {available} tokens, {requested} requested")]
    StratumTooSmall {
        class: PosClass,
        requested: usize,
        available: usize,
    },
    #[error("cannot allocate {n_total} within per-stratum bounds (min total {min}, max total {max})")]
    InfeasibleBounds { n_total: u64, min: u64, max: u64 },
    #[error("invalid confidence level {0}")]
    InvalidConfidence(f64),
}

pub type Result<T, E = SamplingError> = std::result::Result<T, E>;

/// Draws `k` items without replacement by a partial Fisher–Yates shuffle
/// of a copy of `population`. The result is sorted ascending.
pub fn sample_without_replacement(population: &[usize], k: usize, rng: &mut RandomState) -> Result<Vec<usize>> {
    let len = population.len();
    if k > len {
        return Err(SamplingError::SampleTooLarge { k, len });
    }
    let mut pool = population.to_vec();
    for i in 0..k {
        let j = i + rng.next_below((len - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    Ok(pool)
}

/// One stratum as seen by the allocation formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumSpec {
    pub class: PosClass,
    /// Population count N_j.
    pub size: u64,
    /// Standard deviation of the per-token indicator, at most 0.5.
    pub sd: f64,
}

impl StratumSpec {
    pub fn new(class: PosClass, size: u64, sd: f64) -> Result<Self> {
        let spec = StratumSpec { class, size, sd };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: String| SamplingError::InvalidStratum {
            class: self.class,
            reason,
        };
        if self.size == 0 {
            return Err(bad("size must be at least 1".into()));
        }
        if !(0.0..=0.5 + SD_SLACK).contains(&self.sd) {
            return Err(bad(format!("sd {} outside [0, 0.5]", self.sd)));
        }
        Ok(())
    }
}

fn validate_strata(strata: &[StratumSpec]) -> Result<()> {
    if strata.is_empty() {
        return Err(SamplingError::NoStrata);
    }
    strata.iter().try_for_each(StratumSpec::validate)
}

/// Neyman fractions `f_j = N_j s_j / sum(N_i s_i)`.
pub fn neyman_fractions(strata: &[StratumSpec]) -> Result<Vec<f64>> {
    validate_strata(strata)?;
    let products: Vec<f64> = strata.iter().map(|s| s.size as f64 * s.sd).collect();
    let total: f64 = products.iter().sum();
    if total <= 0.0 {
        return Err(SamplingError::DegenerateAllocation);
    }
    Ok(products.into_iter().map(|p| p / total).collect())
}

/// Proportional fractions `f_j = N_j / N`.
pub fn proportional_fractions(strata: &[StratumSpec]) -> Result<Vec<f64>> {
    validate_strata(strata)?;
    let total: f64 = strata.iter().map(|s| s.size as f64).sum();
    Ok(strata.iter().map(|s| s.size as f64 / total).collect())
}

/// Result of the total-sample-size formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSize {
    pub exact: f64,
    pub ceil: u64,
}

pub fn required_sample_size(strata: &[StratumSpec], target_se: f64) -> Result<SampleSize> {
    validate_strata(strata)?;
    if !(target_se > 0.0) {
        return Err(SamplingError::NonPositiveTargetSe(target_se));
    }
    let population: f64 = strata.iter().map(|s| s.size as f64).sum();
    let weighted_sd: f64 = strata.iter().map(|s| s.size as f64 * s.sd).sum();
    let weighted_var: f64 = strata.iter().map(|s| s.size as f64 * s.sd * s.sd).sum();

    let numerator = weighted_sd * weighted_sd / population;
    let denominator = population * target_se * target_se + weighted_var / population;
    let exact = numerator / denominator;
    // Guard against 599.0000000001-style float noise pushing the ceiling up.
    let ceil = (exact - 1e-9).ceil().max(0.0) as u64;
    Ok(SampleSize { exact, ceil })
}

/// Standard error that gives a two-sided normal interval of half-width
/// `margin` at `confidence`.
pub fn target_se_from_margin(margin: f64, confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(SamplingError::InvalidConfidence(confidence));
    }
    if !(margin > 0.0) {
        return Err(SamplingError::NonPositiveTargetSe(margin));
    }
    Ok(margin / normal_quantile((1.0 + confidence) / 2.0))
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(SamplingError::NoStrata);
    }
    if let Some(f) = fractions.iter().find(|f| !(**f >= 0.0)) {
        return Err(SamplingError::InvalidFractions(format!("negative or NaN fraction {f}")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SamplingError::InvalidFractions(format!(
            "fractions sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Largest-remainder rounding of `n_total * f_j`. Leftover units go to the
/// largest fractional remainders, ties to the lower stratum index. The
/// counts always sum to `n_total`.
pub fn allocate_counts(n_total: u64, fractions: &[f64]) -> Result<Vec<u64>> {
    check_fractions(fractions)?;
    Ok(largest_remainder(n_total, fractions))
}

fn largest_remainder(n_total: u64, fractions: &[f64]) -> Vec<u64> {
    let targets: Vec<f64> = fractions.iter().map(|f| f * n_total as f64).collect();
    let mut counts: Vec<u64> = targets.iter().map(|t| t.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    // Float error can put the floors one unit over; trim from the smallest
    // remainders in that case.
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = targets[a] - targets[a].floor();
        let rb = targets[b] - targets[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    if assigned <= n_total {
        let mut left = n_total - assigned;
        for &j in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[j] += 1;
            left -= 1;
        }
    } else {
        let mut excess = assigned - n_total;
        for &j in order.iter().rev().cycle() {
            if excess == 0 {
                break;
            }
            if counts[j] > 0 {
                counts[j] -= 1;
                excess -= 1;
            }
        }
    }
    counts
}

/// Largest-remainder allocation subject to `min[j] <= n_j <= max[j]`.
///
/// Strata that would exceed their maximum are capped first and the rest is
/// re-allocated among the others by their renormalised fractions; then
/// strata below their minimum are raised the same way. When the free strata
/// have zero total fraction they share the remainder equally.
pub fn allocate_bounded(n_total: u64, fractions: &[f64], min: &[u64], max: &[u64]) -> Result<Vec<u64>> {
    check_fractions(fractions)?;
    let k = fractions.len();
    if min.len() != k || max.len() != k {
        return Err(SamplingError::InvalidFractions("bound length mismatch".into()));
    }
    let (lo, hi): (u64, u64) = (min.iter().sum(), max.iter().sum());
    if min.iter().zip(max).any(|(a, b)| a > b) || n_total < lo || n_total > hi {
        return Err(SamplingError::InfeasibleBounds {
            n_total,
            min: lo,
            max: hi,
        });
    }

    let mut fixed: Vec<Option<u64>> = vec![None; k];
    let mut raising = false;
    loop {
        let free: Vec<usize> = (0..k).filter(|&j| fixed[j].is_none()).collect();
        let taken: u64 = fixed.iter().flatten().sum();
        let remaining = n_total.checked_sub(taken).ok_or(SamplingError::InfeasibleBounds {
            n_total,
            min: lo,
            max: hi,
        })?;
        if free.is_empty() {
            if remaining != 0 {
                return Err(SamplingError::InfeasibleBounds {
                    n_total,
                    min: lo,
                    max: hi,
                });
            }
            break;
        }
        let mass: f64 = free.iter().map(|&j| fractions[j]).sum();
        let sub: Vec<f64> = if mass > 0.0 {
            free.iter().map(|&j| fractions[j] / mass).collect()
        } else {
            vec![1.0 / free.len() as f64; free.len()]
        };
        let counts = largest_remainder(remaining, &sub);

        let mut changed = false;
        if !raising {
            for (&j, &c) in free.iter().zip(&counts) {
                if c > max[j] {
                    fixed[j] = Some(max[j]);
                    changed = true;
                }
            }
            if !changed {
                raising = true;
            }
        }
        if raising {
            for (&j, &c) in free.iter().zip(&counts) {
                if c < min[j] {
                    fixed[j] = Some(min[j]);
                    changed = true;
                }
            }
        }
        if !changed {
            for (&j, &c) in free.iter().zip(&counts) {
                fixed[j] = Some(c);
            }
            break;
        }
    }
    Ok(fixed.into_iter().map(|c| c.unwrap_or(0)).collect())
}

/// Sizes and per-stratum counts for the full two-phase sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub classes: Vec<PosClass>,
    pub strata: Vec<StratumSpec>,
    pub target_se: f64,
    /// Raw output of the sample-size formula.
    pub required: SampleSize,
    pub n_total: u64,
    pub fractions: Vec<f64>,
    pub counts: Vec<u64>,
    pub pilot_per_stratum: u64,
    pub second_phase_counts: Vec<u64>,
}

impl AllocationPlan {
    /// Builds a plan whose counts include `pilot_per_stratum` already-drawn
    /// pilot items in every stratum.
    pub fn from_counts(
        strata: Vec<StratumSpec>,
        target_se: f64,
        required: SampleSize,
        fractions: Vec<f64>,
        counts: Vec<u64>,
        pilot_per_stratum: u64,
    ) -> Result<Self> {
        let mut second = Vec::with_capacity(counts.len());
        for (s, &c) in strata.iter().zip(&counts) {
            if c < pilot_per_stratum {
                return Err(SamplingError::InvalidFractions(format!(
                    "{} count {c} is below the pilot size {pilot_per_stratum}",
                    s.class
                )));
            }
            second.push(c - pilot_per_stratum);
        }
        Ok(AllocationPlan {
            classes: strata.iter().map(|s| s.class).collect(),
            n_total: counts.iter().sum(),
            strata,
            target_se,
            required,
            fractions,
            counts,
            pilot_per_stratum,
            second_phase_counts: second,
        })
    }

    pub fn second_phase_for(&self, class: PosClass) -> u64 {
        self.classes
            .iter()
            .position(|&c| c == class)
            .map_or(0, |j| self.second_phase_counts[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawPhase {
    Pilot,
    Main,
}

/// Indices drawn in one phase, per stratum, each list sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleDraw {
    pub phase: DrawPhase,
    pub seed: u64,
    pub items: BTreeMap<PosClass, Vec<usize>>,
}

impl SampleDraw {
    pub fn len(&self) -> usize {
        self.items.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stratum(&self, class: PosClass) -> &[usize] {
        self.items.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PosClass, usize)> + '_ {
        self.items
            .iter()
            .flat_map(|(&class, idx)| idx.iter().map(move |&i| (class, i)))
    }
}

/// First phase: `m` items from each stratum, one generator threaded through
/// the strata in noun, adjective, verb order.
pub fn pilot_draw(corpus: &Corpus, m: usize, seed: u64) -> Result<SampleDraw> {
    let mut rng = RandomState::new(seed);
    let mut items = BTreeMap::new();
    for class in PosClass::STRATA {
        let population = corpus.stratum(class);
        if m > population.len() {
            return Err(SamplingError::StratumTooSmall {
                class,
                requested: m,
                available: population.len(),
            });
        }
        items.insert(class, sample_without_replacement(population, m, &mut rng)?);
    }
    Ok(SampleDraw {
        phase: DrawPhase::Pilot,
        seed,
        items,
    })
}

/// Second phase: the plan's second-phase counts, drawn from each stratum
/// with the pilot items removed.
pub fn main_draw(corpus: &Corpus, plan: &AllocationPlan, pilot: &SampleDraw, seed: u64) -> Result<SampleDraw> {
    let mut rng = RandomState::new(seed);
    let mut items = BTreeMap::new();
    for class in PosClass::STRATA {
        let taken: HashSet<usize> = pilot.stratum(class).iter().copied().collect();
        let remaining: Vec<usize> = corpus
            .stratum(class)
            .iter()
            .copied()
            .filter(|i| !taken.contains(i))
            .collect();
        let k = plan.second_phase_for(class) as usize;
        if k > remaining.len() {
            return Err(SamplingError::StratumTooSmall {
                class,
                requested: k,
                available: remaining.len(),
            });
        }
        items.insert(class, sample_without_replacement(&remaining, k, &mut rng)?);
    }
    Ok(SampleDraw {
        phase: DrawPhase::Main,
        seed,
        items,
    })
}
