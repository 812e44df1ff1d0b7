//! Proportion estimates from judged samples: per-stratum precision and
//! recall, pooled estimates, stratified standard errors, normal-approximation
//! confidence intervals and the F-measure.

mod normal;
pub mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normal::normal_quantile;
pub use report::{build_report, Estimate, EvaluationReport, ModeEstimates, ReportSettings, StratumInput, StratumStats};

#[derive(Debug, Error, PartialEq)]
pub enum EstimationError {
    #[error("total weight is zero")]
    ZeroWeight,
    #[error("proportion {0} outside [0, 1]")]
    ProportionOutOfRange(f64),
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error("stratum sample size is zero")]
    EmptyStratum,
    #[error("weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("recall is undefined: no judged items")]
    NoJudgments,
    #[error("invalid confidence level {0}")]
    InvalidLevel(f64),
}

pub type Result<T, E = EstimationError> = std::result::Result<T, E>;

/// A human verdict on one sampled token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CorrectLemma,
    WrongLemma,
    /// The lemmatizer produced nothing for the token.
    NoOutput,
}

impl Verdict {
    pub fn short(self) -> char {
        match self {
            Verdict::CorrectLemma => 'c',
            Verdict::WrongLemma => 'w',
            Verdict::NoOutput => 'n',
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::CorrectLemma => "correct_lemma",
            Verdict::WrongLemma => "wrong_lemma",
            Verdict::NoOutput => "no_output",
        })
    }
}

#[derive(Debug, Error)]
#[error("unknown verdict '{0}' (expected c/correct_lemma, w/wrong_lemma or n/no_output)")]
pub struct ParseVerdictError(String);

impl FromStr for Verdict {
    type Err = ParseVerdictError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c" | "correct" | "correct_lemma" | "correctlemma" => Ok(Verdict::CorrectLemma),
            "w" | "wrong" | "wrong_lemma" | "wronglemma" => Ok(Verdict::WrongLemma),
            "n" | "none" | "no_output" | "nooutput" => Ok(Verdict::NoOutput),
            _ => Err(ParseVerdictError(s.to_string())),
        }
    }
}

/// Tallies of verdicts within one stratum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCounts {
    pub judged: u64,
    /// Judged tokens for which the lemmatizer produced a lemma.
    pub produced: u64,
    pub correct: u64,
}

impl StratumCounts {
    pub fn add(&mut self, verdict: Verdict) {
        self.judged += 1;
        match verdict {
            Verdict::CorrectLemma => {
                self.produced += 1;
                self.correct += 1;
            }
            Verdict::WrongLemma => self.produced += 1,
            Verdict::NoOutput => {}
        }
    }

    /// `correct / produced`; `None` when nothing was produced.
    pub fn precision(&self) -> Option<f64> {
        (self.produced > 0).then(|| self.correct as f64 / self.produced as f64)
    }

    /// `correct / judged`; `None` when nothing was judged.
    pub fn recall(&self) -> Option<f64> {
        (self.judged > 0).then(|| self.correct as f64 / self.judged as f64)
    }
}

impl FromIterator<Verdict> for StratumCounts {
    fn from_iter<I: IntoIterator<Item = Verdict>>(iter: I) -> Self {
        let mut counts = StratumCounts::default();
        iter.into_iter().for_each(|v| counts.add(v));
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumProportions {
    pub precision: Option<f64>,
    pub produced: u64,
    pub recall: Option<f64>,
    pub judged: u64,
}

pub fn stratum_proportions<I: IntoIterator<Item = Verdict>>(verdicts: I) -> StratumProportions {
    let c: StratumCounts = verdicts.into_iter().collect();
    StratumProportions {
        precision: c.precision(),
        produced: c.produced,
        recall: c.recall(),
        judged: c.judged,
    }
}

/// Which divisor the Bernoulli SD uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdDivisor {
    /// `sqrt(p(1-p))`
    #[default]
    Population,
    /// `sqrt(p(1-p) * m/(m-1))`
    Sample,
}

/// Standard deviation of a 0/1 indicator with success rate `p` observed over
/// `m` items.
///
/// # Panics
///
/// With [`SdDivisor::Sample`] when `m < 2`.
pub fn bernoulli_sd(p: f64, m: u64, divisor: SdDivisor) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let var = p * (1.0 - p);
    match divisor {
        SdDivisor::Population => var.sqrt(),
        SdDivisor::Sample => {
            assert!(m >= 2, "sample-divisor SD needs at least two observations");
            (var * m as f64 / (m - 1) as f64).sqrt()
        }
    }
}

/// How stratum proportions are weighted when pooled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Weights are the sample denominators of each stratum proportion.
    SampleWeighted,
    /// Weights are the population sizes the proportions generalise to.
    #[default]
    PopulationWeighted,
}

impl FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sample" | "sample_weighted" => Ok(WeightMode::SampleWeighted),
            "population" | "population_weighted" => Ok(WeightMode::PopulationWeighted),
            other => Err(format!("unknown weight mode '{other}' (expected sample or population)")),
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::SampleWeighted => "sample_weighted",
            WeightMode::PopulationWeighted => "population_weighted",
        })
    }
}

/// Weighted mean `sum(w_i p_i) / sum(w_i)` of `(weight, proportion)` pairs.
pub fn pooled_proportion(pairs: &[(f64, f64)]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(w, p) in pairs {
        if !(0.0..=1.0).contains(&p) {
            return Err(EstimationError::ProportionOutOfRange(p));
        }
        if !(w >= 0.0) {
            return Err(EstimationError::NegativeWeight(w));
        }
        num += w * p;
        den += w;
    }
    if den <= 0.0 {
        return Err(EstimationError::ZeroWeight);
    }
    // Keep the result inside [min p, max p] despite rounding.
    let (lo, hi) = pairs
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, p)| {
            (lo.min(p), hi.max(p))
        });
    Ok((num / den).clamp(lo, hi))
}

/// One stratum's contribution to a stratified standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeTerm {
    /// Stratum weight; all weights sum to 1.
    pub weight: f64,
    pub p: f64,
    pub n: f64,
    /// Stratum population size, used only when the finite population
    /// correction is on.
    pub population: f64,
}

/// `sqrt(sum(w_j^2 p_j (1-p_j) / n_j))`, each term shrunk by `1 - n_j/N_j`
/// when `fpc` is set.
pub fn stratified_se(terms: &[SeTerm], fpc: bool) -> Result<f64> {
    let total: f64 = terms.iter().map(|t| t.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(EstimationError::WeightsNotNormalized(total));
    }
    let mut var = 0.0;
    for t in terms {
        if !(t.n >= 1.0) {
            return Err(EstimationError::EmptyStratum);
        }
        if !(0.0..=1.0).contains(&t.p) {
            return Err(EstimationError::ProportionOutOfRange(t.p));
        }
        let mut term = t.weight * t.weight * t.p * (1.0 - t.p) / t.n;
        if fpc {
            term *= (1.0 - t.n / t.population).max(0.0);
        }
        var += term;
    }
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Two-sided normal interval `p ± z se` at `level`, clipped to `[0, 1]`.
pub fn confidence_interval(p: f64, se: f64, level: f64) -> Result<Interval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimationError::InvalidLevel(level));
    }
    let z = normal_quantile((1.0 + level) / 2.0);
    let half = z * se.max(0.0);
    Ok(Interval {
        lo: (p - half).clamp(0.0, 1.0),
        hi: (p + half).clamp(0.0, 1.0),
    })
}

/// `F_beta = (1 + beta^2) P R / (beta^2 P + R)`, zero when both are zero.
pub fn f_measure(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den <= 0.0 {
        return 0.0;
    }
    (1.0 + b2) * precision * recall / den
}
