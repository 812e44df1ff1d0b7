//! Pooled precision/recall/F report over all judged strata.
//!
//! Precision is pooled over strata with at least one produced lemma, weighted
//! by produced counts (sample mode) or by the estimated number of produced
//! tokens in the stratum population, `N_j * produced_j / judged_j`
//! (population mode). Recall is weighted by judged counts or by `N_j`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    confidence_interval, f_measure, pooled_proportion, stratified_se, EstimationError, Result, SeTerm, StratumCounts,
    WeightMode,
};
use crate::corpus::{FrequencyTable, PosClass};

/// What the report needs to know about one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumInput {
    pub class: PosClass,
    pub population_size: u64,
    /// Items drawn in this stratum across both phases.
    pub sample_size: u64,
    pub counts: StratumCounts,
    /// SD used for allocation.
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub confidence_level: f64,
    pub beta: f64,
    pub target_se: f64,
    pub weight_mode: WeightMode,
    pub fpc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    pub class: PosClass,
    pub population_size: u64,
    pub sample_size: u64,
    pub judged: u64,
    pub produced: u64,
    pub correct: u64,
    pub p_precision: Option<f64>,
    pub p_recall: Option<f64>,
    pub sd: f64,
}

/// A point estimate with its standard error and confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimates {
    pub weight_mode: WeightMode,
    /// `None` when no stratum produced any lemma.
    pub precision: Option<Estimate>,
    pub recall: Estimate,
    pub f_measure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub confidence_level: f64,
    pub target_se: f64,
    pub beta: f64,
    /// The mode whose values appear in `precision`, `recall` and `f_measure`.
    pub weight_mode: WeightMode,
    pub precision: Option<Estimate>,
    pub recall: Estimate,
    pub f_measure: Option<f64>,
    pub sample_weighted: ModeEstimates,
    pub population_weighted: ModeEstimates,
    pub per_stratum: Vec<StratumStats>,
    pub frequency: Vec<FrequencyTable>,
}

impl EvaluationReport {
    pub fn mode(&self, mode: WeightMode) -> &ModeEstimates {
        match mode {
            WeightMode::SampleWeighted => &self.sample_weighted,
            WeightMode::PopulationWeighted => &self.population_weighted,
        }
    }

    /// Same report with `mode` promoted to the headline values.
    pub fn with_primary(&self, mode: WeightMode) -> EvaluationReport {
        let m = *self.mode(mode);
        EvaluationReport {
            weight_mode: mode,
            precision: m.precision,
            recall: m.recall,
            f_measure: m.f_measure,
            ..self.clone()
        }
    }

    /// Plain-text summary: point estimates, intervals and F, then the
    /// per-stratum breakdown.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let pct = self.confidence_level * 100.0;
        let _ = writeln!(
            out,
            "Evaluation report ({pct:.0}% confidence, {} primary)",
            self.weight_mode
        );
        for m in [&self.population_weighted, &self.sample_weighted] {
            let mark = if m.weight_mode == self.weight_mode { "*" } else { " " };
            let _ = writeln!(out, "{mark} {}", m.weight_mode);
            match &m.precision {
                Some(p) => {
                    let _ = writeln!(
                        out,
                        "    Precision  P = {:.4}   {:.4} < P < {:.4}   (se {:.4})",
                        p.point, p.lo, p.hi, p.se
                    );
                }
                None => {
                    let _ = writeln!(out, "    Precision  undefined (no lemma produced)");
                }
            }
            let r = &m.recall;
            let _ = writeln!(
                out,
                "    Recall     R = {:.4}   {:.4} < R < {:.4}   (se {:.4})",
                r.point, r.lo, r.hi, r.se
            );
            match m.f_measure {
                Some(f) => {
                    let _ = writeln!(out, "    F(beta={})  F = {:.4}", self.beta, f);
                }
                None => {
                    let _ = writeln!(out, "    F(beta={})  undefined", self.beta);
                }
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>7} {:>7} {:>9} {:>8} {:>10} {:>8} {:>7}",
            "stratum", "N", "n", "judged", "produced", "correct", "precision", "recall", "sd"
        );
        for s in &self.per_stratum {
            let prec = s.p_precision.map_or("-".to_string(), |p| format!("{p:.4}"));
            let rec = s.p_recall.map_or("-".to_string(), |p| format!("{p:.4}"));
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>7} {:>7} {:>9} {:>8} {:>10} {:>8} {:>7.4}",
                s.class.to_string(),
                s.population_size,
                s.sample_size,
                s.judged,
                s.produced,
                s.correct,
                prec,
                rec,
                s.sd
            );
        }
        out
    }
}

struct Component {
    weight: f64,
    p: f64,
    n: f64,
    population: f64,
}

fn estimate(components: &[Component], settings: &ReportSettings) -> Result<Estimate> {
    let pairs: Vec<(f64, f64)> = components.iter().map(|c| (c.weight, c.p)).collect();
    let point = pooled_proportion(&pairs)?;
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let terms: Vec<SeTerm> = components
        .iter()
        .map(|c| SeTerm {
            weight: c.weight / total,
            p: c.p,
            n: c.n,
            population: c.population,
        })
        .collect();
    let se = stratified_se(&terms, settings.fpc)?;
    let ci = confidence_interval(point, se, settings.confidence_level)?;
    Ok(Estimate {
        point,
        se,
        lo: ci.lo.min(point),
        hi: ci.hi.max(point),
    })
}

fn mode_estimates(strata: &[StratumInput], mode: WeightMode, settings: &ReportSettings) -> Result<ModeEstimates> {
    let recall_parts: Vec<Component> = strata
        .iter()
        .filter_map(|s| {
            let p = s.counts.recall()?;
            let weight = match mode {
                WeightMode::SampleWeighted => s.counts.judged as f64,
                WeightMode::PopulationWeighted => s.population_size as f64,
            };
            Some(Component {
                weight,
                p,
                n: s.counts.judged as f64,
                population: s.population_size as f64,
            })
        })
        .collect();
    if recall_parts.is_empty() {
        return Err(EstimationError::NoJudgments);
    }
    let recall = estimate(&recall_parts, settings)?;

    let precision_parts: Vec<Component> = strata
        .iter()
        .filter_map(|s| {
            let p = s.counts.precision()?;
            let produced_population = s.population_size as f64 * s.counts.produced as f64 / s.counts.judged as f64;
            let weight = match mode {
                WeightMode::SampleWeighted => s.counts.produced as f64,
                WeightMode::PopulationWeighted => produced_population,
            };
            Some(Component {
                weight,
                p,
                n: s.counts.produced as f64,
                population: produced_population,
            })
        })
        .collect();
    let precision = if precision_parts.is_empty() {
        None
    } else {
        Some(estimate(&precision_parts, settings)?)
    };
    let f = precision.map(|p| f_measure(p.point, recall.point, settings.beta));
    Ok(ModeEstimates {
        weight_mode: mode,
        precision,
        recall,
        f_measure: f,
    })
}

/// Builds the report from per-stratum tallies. Both weight modes are
/// computed; `settings.weight_mode` selects the headline values.
pub fn build_report(
    strata: &[StratumInput],
    frequency: Vec<FrequencyTable>,
    settings: &ReportSettings,
) -> Result<EvaluationReport> {
    let sample_weighted = mode_estimates(strata, WeightMode::SampleWeighted, settings)?;
    let population_weighted = mode_estimates(strata, WeightMode::PopulationWeighted, settings)?;
    let primary = match settings.weight_mode {
        WeightMode::SampleWeighted => sample_weighted,
        WeightMode::PopulationWeighted => population_weighted,
    };
    let per_stratum = strata
        .iter()
        .map(|s| StratumStats {
            class: s.class,
            population_size: s.population_size,
            sample_size: s.sample_size,
            judged: s.counts.judged,
            produced: s.counts.produced,
            correct: s.counts.correct,
            p_precision: s.counts.precision(),
            p_recall: s.counts.recall(),
            sd: s.sd,
        })
        .collect();
    Ok(EvaluationReport {
        confidence_level: settings.confidence_level,
        target_se: settings.target_se,
        beta: settings.beta,
        weight_mode: settings.weight_mode,
        precision: primary.precision,
        recall: primary.recall,
        f_measure: primary.f_measure,
        sample_weighted,
        population_weighted,
        per_stratum,
        frequency,
    })
}
