//! The two-phase evaluation as a persistent state machine.
//!
//! ```text
//! Created -> PilotDrawn -> PilotJudged -> Allocated -> MainDrawn -> Complete -> Reported
//! ```
//!
//! Every successful mutation is appended to the audit log, so replaying the
//! log against the same corpus rebuilds the state exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, frequency_table, Corpus, CorpusError, CorpusRef, PosClass};
use crate::estimation::{
    bernoulli_sd, build_report, EstimationError, EvaluationReport, ReportSettings, SdDivisor, StratumCounts,
    StratumInput, Verdict, WeightMode,
};
use crate::sampling::{
    allocate_bounded, derive_seed, main_draw, neyman_fractions, pilot_draw, proportional_fractions,
    required_sample_size, target_se_from_margin, AllocationPlan, SampleDraw, SamplingError, StratumSpec,
};

/// Version written to and accepted from study files.
pub const STUDY_VERSION: u32 = 1;

const MAIN_DRAW_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{class} stratum has {size} tokens, the pilot needs {needed}")]
    StratumTooSmall { class: PosClass, size: usize, needed: u64 },
    #[error("{phase} items not fully judged: {}", format_remaining(.remaining))]
    Unjudged {
        phase: Phase,
        remaining: Vec<(PosClass, usize)>,
    },
    #[error("study is already reported; no further phase")]
    NoFurtherPhase,
    #[error("study is reported; judgments are closed")]
    Closed,
    #[error("report needs the main sample; study is in phase {0}")]
    NotReady(Phase),
    #[error("item {0} is not in any draw")]
    NotDrawn(usize),
    #[error("item {index}: verdict {verdict} {reason}")]
    InconsistentVerdict {
        index: usize,
        verdict: Verdict,
        reason: &'static str,
    },
    #[error("judge id must not be empty")]
    MissingJudge,
    #[error("requested total {requested} is below the required {required}")]
    TotalTooSmall { requested: u64, required: u64 },
    #[error("requested total {requested} exceeds the population of {population}")]
    TotalTooLarge { requested: u64, population: u64 },
    #[error("corpus changed since the study was created (expected digest {expected}, found {found})")]
    CorpusDrift { expected: String, found: String },
    #[error("unsupported study file version {0} (this build reads up to {STUDY_VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt study: {0}")]
    Corrupt(String),
    #[error("replay diverged at audit entry {entry}: {reason}")]
    ReplayDiverged { entry: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("study file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl StudyError {
    /// True for errors caused by the study's phase or judging progress
    /// rather than by bad input data.
    pub fn is_state_error(&self) -> bool {
        matches!(
            self,
            StudyError::Unjudged { .. }
                | StudyError::NoFurtherPhase
                | StudyError::Closed
                | StudyError::NotReady(_)
                | StudyError::ReplayDiverged { .. }
        )
    }
}

fn format_remaining(remaining: &[(PosClass, usize)]) -> String {
    remaining
        .iter()
        .map(|(class, n)| format!("{n} remaining in {class}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T, E = StudyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Created,
    PilotDrawn,
    PilotJudged,
    Allocated,
    MainDrawn,
    Complete,
    Reported,
}

impl Phase {
    pub fn next(self) -> Option<Phase> {
        use Phase::*;
        match self {
            Created => Some(PilotDrawn),
            PilotDrawn => Some(PilotJudged),
            PilotJudged => Some(Allocated),
            Allocated => Some(MainDrawn),
            MainDrawn => Some(Complete),
            Complete => Some(Reported),
            Reported => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Created => "created",
            Phase::PilotDrawn => "pilot_drawn",
            Phase::PilotJudged => "pilot_judged",
            Phase::Allocated => "allocated",
            Phase::MainDrawn => "main_drawn",
            Phase::Complete => "complete",
            Phase::Reported => "reported",
        };
        f.write_str(s)
    }
}

/// How tight the pooled estimate must be.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrecisionTarget {
    /// Standard error of the pooled proportion.
    StandardError { se: f64 },
    /// Interval half-width at a confidence level; converted to `margin / z`.
    Margin { margin: f64, confidence: f64 },
}

impl PrecisionTarget {
    pub fn target_se(&self) -> Result<f64> {
        match *self {
            PrecisionTarget::StandardError { se } if se > 0.0 => Ok(se),
            PrecisionTarget::StandardError { se } => Err(SamplingError::NonPositiveTargetSe(se).into()),
            PrecisionTarget::Margin { margin, confidence } => Ok(target_se_from_margin(margin, confidence)?),
        }
    }
}

/// Which pilot proportion's SD drives allocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdSource {
    /// `correct / judged`
    #[default]
    Recall,
    /// `correct / produced`
    Precision,
}

impl FromStr for SdSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "recall" => Ok(SdSource::Recall),
            "precision" => Ok(SdSource::Precision),
            other => Err(format!("unknown SD source '{other}' (expected recall or precision)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub pilot_per_stratum: u64,
    pub target: PrecisionTarget,
    pub confidence_level: f64,
    pub beta: f64,
    pub context_radius: usize,
    pub weight_mode: WeightMode,
    pub seed: u64,
    pub sd_divisor: SdDivisor,
    pub sd_source: SdSource,
    /// Total sample size to use instead of the computed minimum. Must not be
    /// below it.
    pub total_override: Option<u64>,
    /// Apply the finite population correction to standard errors.
    pub fpc: bool,
}

impl StudyConfig {
    pub fn new(seed: u64) -> Self {
        StudyConfig {
            pilot_per_stratum: 40,
            target: PrecisionTarget::StandardError { se: 0.01 },
            confidence_level: 0.95,
            beta: 1.0,
            context_radius: 5,
            weight_mode: WeightMode::PopulationWeighted,
            seed,
            sd_divisor: SdDivisor::Population,
            sd_source: SdSource::Recall,
            total_override: None,
            fpc: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(StudyError::InvalidConfig(msg));
        if self.pilot_per_stratum < 2 {
            return bad(format!("pilot size {} is below 2", self.pilot_per_stratum));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return bad(format!("confidence level {} outside (0, 1)", self.confidence_level));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad(format!("beta {} must be positive", self.beta));
        }
        self.target.target_se()?;
        Ok(())
    }

    pub fn report_settings(&self) -> Result<ReportSettings> {
        Ok(ReportSettings {
            confidence_level: self.confidence_level,
            beta: self.beta,
            target_se: self.target.target_se()?,
            weight_mode: self.weight_mode,
            fpc: self.fpc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub item_index: usize,
    pub verdict: Verdict,
    pub judge_id: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Create {
        config: StudyConfig,
    },
    Advance {
        from: Phase,
        to: Phase,
    },
    Judge {
        item_index: usize,
        verdict: Verdict,
        judge_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draws {
    pub pilot: Option<SampleDraw>,
    pub main: Option<SampleDraw>,
}

/// Everything persisted in a study file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyState {
    pub version: u32,
    pub config: StudyConfig,
    pub corpus_path: PathBuf,
    pub corpus_digest: String,
    pub phase: Phase,
    pub draws: Draws,
    pub allocation: Option<AllocationPlan>,
    pub judgments: BTreeMap<usize, Judgment>,
    pub audit_log: Vec<AuditEntry>,
}

/// Per-stratum judging progress.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumProgress {
    pub class: PosClass,
    pub population: usize,
    pub pilot_target: u64,
    pub pilot_judged: usize,
    /// Planned total for the stratum once allocated.
    pub planned: Option<u64>,
    pub drawn: usize,
    pub judged: usize,
}

impl StratumProgress {
    pub fn remaining(&self) -> usize {
        self.drawn - self.judged
    }
}

/// A study bound to its corpus.
#[derive(Debug, Clone)]
pub struct Study {
    state: StudyState,
    corpus: Arc<Corpus>,
    drawn: BTreeMap<usize, PosClass>,
}

impl Study {
    pub fn create(corpus: Arc<Corpus>, corpus_ref: CorpusRef, config: StudyConfig, at: DateTime<Utc>) -> Result<Self> {
        config.validate()?;
        for class in PosClass::STRATA {
            let size = corpus.stratum_size(class);
            if size == 0 || (size as u64) < config.pilot_per_stratum {
                return Err(StudyError::StratumTooSmall {
                    class,
                    size,
                    needed: config.pilot_per_stratum.max(1),
                });
            }
        }
        let state = StudyState {
            version: STUDY_VERSION,
            config: config.clone(),
            corpus_path: corpus_ref.path,
            corpus_digest: corpus_ref.digest,
            phase: Phase::Created,
            draws: Draws::default(),
            allocation: None,
            judgments: BTreeMap::new(),
            audit_log: vec![AuditEntry {
                at,
                action: Action::Create { config },
            }],
        };
        Ok(Study {
            state,
            corpus,
            drawn: BTreeMap::new(),
        })
    }

    /// Binds a deserialized state to a corpus, checking the digest and the
    /// state's internal consistency.
    pub fn open(state: StudyState, corpus: Arc<Corpus>, corpus_digest: &str) -> Result<Self> {
        if state.version > STUDY_VERSION || state.version == 0 {
            return Err(StudyError::UnsupportedVersion(state.version));
        }
        if state.corpus_digest != corpus_digest {
            return Err(StudyError::CorpusDrift {
                expected: state.corpus_digest.clone(),
                found: corpus_digest.to_string(),
            });
        }
        let mut study = Study {
            state,
            corpus,
            drawn: BTreeMap::new(),
        };
        study.reindex()?;
        study.check_consistency()?;
        Ok(study)
    }

    pub fn state(&self) -> &StudyState {
        &self.state
    }

    pub fn into_state(self) -> StudyState {
        self.state
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn config(&self) -> &StudyConfig {
        &self.state.config
    }

    pub fn allocation(&self) -> Option<&AllocationPlan> {
        self.state.allocation.as_ref()
    }

    pub fn judgments(&self) -> &BTreeMap<usize, Judgment> {
        &self.state.judgments
    }

    /// Stratum of a drawn item, `None` when the item is not drawn.
    pub fn drawn_class(&self, index: usize) -> Option<PosClass> {
        self.drawn.get(&index).copied()
    }

    pub fn is_drawn(&self, index: usize) -> bool {
        self.drawn.contains_key(&index)
    }

    fn reindex(&mut self) -> Result<()> {
        self.drawn.clear();
        let draws = [&self.state.draws.pilot, &self.state.draws.main];
        for draw in draws.into_iter().flatten() {
            for (class, index) in draw.iter() {
                if self.drawn.insert(index, class).is_some() {
                    return Err(StudyError::Corrupt(format!("item {index} drawn twice")));
                }
            }
        }
        Ok(())
    }

    fn check_consistency(&self) -> Result<()> {
        let s = &self.state;
        let reached = |p: Phase| s.phase >= p;
        if s.draws.pilot.is_some() != reached(Phase::PilotDrawn)
            || s.allocation.is_some() != reached(Phase::Allocated)
            || s.draws.main.is_some() != reached(Phase::MainDrawn)
        {
            return Err(StudyError::Corrupt(format!("fields do not match phase {}", s.phase)));
        }
        for (&index, j) in &s.judgments {
            if j.item_index != index || !self.drawn.contains_key(&index) {
                return Err(StudyError::Corrupt(format!("judgment for undrawn item {index}")));
            }
        }
        for (&index, &class) in &self.drawn {
            match self.corpus.get(index) {
                Some(r) if r.class() == class => {}
                _ => return Err(StudyError::Corrupt(format!("drawn item {index} is not a {class}"))),
            }
        }
        if s.audit_log.len() < s.judgments.len() {
            return Err(StudyError::Corrupt("audit log shorter than the ledger".into()));
        }
        Ok(())
    }

    fn unjudged_counts(&self, draw: Option<&SampleDraw>) -> Vec<(PosClass, usize)> {
        let Some(draw) = draw else { return Vec::new() };
        PosClass::STRATA
            .iter()
            .filter_map(|&class| {
                let n = draw
                    .stratum(class)
                    .iter()
                    .filter(|i| !self.state.judgments.contains_key(i))
                    .count();
                (n > 0).then_some((class, n))
            })
            .collect()
    }

    fn require_judged(&self, phase: Phase, draws: &[Option<&SampleDraw>]) -> Result<()> {
        let mut remaining: BTreeMap<PosClass, usize> = BTreeMap::new();
        for &draw in draws {
            for (class, n) in self.unjudged_counts(draw) {
                *remaining.entry(class).or_default() += n;
            }
        }
        if remaining.is_empty() {
            Ok(())
        } else {
            Err(StudyError::Unjudged {
                phase,
                remaining: remaining.into_iter().collect(),
            })
        }
    }

    /// Moves to the next phase, doing that phase's work.
    pub fn advance(&mut self, at: DateTime<Utc>) -> Result<Phase> {
        let from = self.state.phase;
        let to = from.next().ok_or(StudyError::NoFurtherPhase)?;
        match from {
            Phase::Created => {
                let m = self.state.config.pilot_per_stratum as usize;
                let draw = pilot_draw(&self.corpus, m, self.state.config.seed)?;
                self.state.draws.pilot = Some(draw);
                self.reindex()?;
            }
            Phase::PilotDrawn => {
                self.require_judged(from, &[self.state.draws.pilot.as_ref()])?;
            }
            Phase::PilotJudged => {
                let plan = self.plan_allocation()?;
                self.state.allocation = Some(plan);
            }
            Phase::Allocated => {
                let (Some(plan), Some(pilot)) = (&self.state.allocation, &self.state.draws.pilot) else {
                    return Err(StudyError::Corrupt("allocated without plan or pilot".into()));
                };
                let seed = derive_seed(self.state.config.seed, MAIN_DRAW_STREAM);
                let draw = main_draw(&self.corpus, plan, pilot, seed)?;
                self.state.draws.main = Some(draw);
                self.reindex()?;
            }
            Phase::MainDrawn => {
                self.require_judged(from, &[self.state.draws.pilot.as_ref(), self.state.draws.main.as_ref()])?;
            }
            Phase::Complete => {
                self.report()?;
            }
            Phase::Reported => unreachable!("Reported has no successor"),
        }
        self.state.phase = to;
        self.state.audit_log.push(AuditEntry {
            at,
            action: Action::Advance { from, to },
        });
        Ok(to)
    }

    fn stratum_counts(&self, draw: &SampleDraw, class: PosClass) -> StratumCounts {
        draw.stratum(class)
            .iter()
            .filter_map(|i| self.state.judgments.get(i))
            .map(|j| j.verdict)
            .collect()
    }

    /// SD of the pilot proportion chosen by `sd_source`, capped at the
    /// Bernoulli maximum of 0.5.
    fn pilot_sd(&self, counts: &StratumCounts) -> f64 {
        let cfg = &self.state.config;
        let (p, m) = match cfg.sd_source {
            SdSource::Recall => (counts.recall(), counts.judged),
            SdSource::Precision => (counts.precision(), counts.produced),
        };
        match p {
            Some(p) if m >= 2 || cfg.sd_divisor == SdDivisor::Population => bernoulli_sd(p, m, cfg.sd_divisor).min(0.5),
            // Too few observations to estimate; assume the worst case.
            _ => 0.5,
        }
    }

    fn plan_allocation(&self) -> Result<AllocationPlan> {
        let cfg = &self.state.config;
        let pilot = self
            .state
            .draws
            .pilot
            .as_ref()
            .ok_or_else(|| StudyError::Corrupt("no pilot draw".into()))?;
        let m = cfg.pilot_per_stratum;
        let mut strata = Vec::with_capacity(3);
        for class in PosClass::STRATA {
            let counts = self.stratum_counts(pilot, class);
            let size = self.corpus.stratum_size(class) as u64;
            strata.push(StratumSpec::new(class, size, self.pilot_sd(&counts))?);
        }
        let target_se = cfg.target.target_se()?;
        let fractions = match neyman_fractions(&strata) {
            Err(SamplingError::DegenerateAllocation) => proportional_fractions(&strata)?,
            other => other?,
        };
        let required = required_sample_size(&strata, target_se)?;
        let population: u64 = strata.iter().map(|s| s.size).sum();
        let floor = required.ceil.max(3 * m);
        let n_total = match cfg.total_override {
            Some(t) if t < floor => {
                return Err(StudyError::TotalTooSmall {
                    requested: t,
                    required: floor,
                })
            }
            Some(t) if t > population => {
                return Err(StudyError::TotalTooLarge {
                    requested: t,
                    population,
                })
            }
            Some(t) => t,
            None => floor.min(population),
        };
        let min = vec![m; strata.len()];
        let max: Vec<u64> = strata.iter().map(|s| s.size).collect();
        let counts = allocate_bounded(n_total, &fractions, &min, &max)?;
        Ok(AllocationPlan::from_counts(
            strata, target_se, required, fractions, counts, m,
        )?)
    }

    /// Records (or overwrites) the verdict for a drawn item.
    pub fn record_judgment(&mut self, index: usize, verdict: Verdict, judge_id: &str, at: DateTime<Utc>) -> Result<()> {
        if self.state.phase == Phase::Reported {
            return Err(StudyError::Closed);
        }
        if !self.drawn.contains_key(&index) {
            return Err(StudyError::NotDrawn(index));
        }
        let judge_id = judge_id.trim();
        if judge_id.is_empty() {
            return Err(StudyError::MissingJudge);
        }
        let has_output = self.corpus.records()[index].has_output();
        match (verdict, has_output) {
            (Verdict::NoOutput, true) => {
                return Err(StudyError::InconsistentVerdict {
                    index,
                    verdict,
                    reason: "is not allowed when the system produced a lemma",
                })
            }
            (Verdict::CorrectLemma | Verdict::WrongLemma, false) => {
                return Err(StudyError::InconsistentVerdict {
                    index,
                    verdict,
                    reason: "is not allowed when the system produced no lemma",
                })
            }
            _ => {}
        }
        self.state.judgments.insert(
            index,
            Judgment {
                item_index: index,
                verdict,
                judge_id: judge_id.to_string(),
                timestamp: at,
            },
        );
        self.state.audit_log.push(AuditEntry {
            at,
            action: Action::Judge {
                item_index: index,
                verdict,
                judge_id: judge_id.to_string(),
            },
        });
        Ok(())
    }

    /// Lowest-index drawn item without a verdict, optionally within one
    /// stratum.
    pub fn next_unjudged(&self, filter: Option<PosClass>) -> Option<usize> {
        self.drawn
            .iter()
            .filter(|(_, &class)| filter.is_none_or(|f| f == class))
            .map(|(&i, _)| i)
            .find(|i| !self.state.judgments.contains_key(i))
    }

    /// All drawn items without a verdict, ascending.
    pub fn unjudged_items(&self) -> Vec<usize> {
        self.drawn
            .keys()
            .copied()
            .filter(|i| !self.state.judgments.contains_key(i))
            .collect()
    }

    pub fn progress(&self) -> Vec<StratumProgress> {
        let pilot = self.state.draws.pilot.as_ref();
        PosClass::STRATA
            .iter()
            .enumerate()
            .map(|(j, &class)| {
                let pilot_items = pilot.map_or(&[][..], |d| d.stratum(class));
                let judged_in = |items: &[usize]| items.iter().filter(|i| self.state.judgments.contains_key(i)).count();
                let main_items = self.state.draws.main.as_ref().map_or(&[][..], |d| d.stratum(class));
                StratumProgress {
                    class,
                    population: self.corpus.stratum_size(class),
                    pilot_target: self.state.config.pilot_per_stratum,
                    pilot_judged: judged_in(pilot_items),
                    planned: self.state.allocation.as_ref().map(|p| p.counts[j]),
                    drawn: pilot_items.len() + main_items.len(),
                    judged: judged_in(pilot_items) + judged_in(main_items),
                }
            })
            .collect()
    }

    /// Builds the evaluation report from all judged items of both phases.
    pub fn report(&self) -> Result<EvaluationReport> {
        if self.state.phase < Phase::MainDrawn {
            return Err(StudyError::NotReady(self.state.phase));
        }
        self.require_judged(
            self.state.phase,
            &[self.state.draws.pilot.as_ref(), self.state.draws.main.as_ref()],
        )?;
        let plan = self
            .state
            .allocation
            .as_ref()
            .ok_or_else(|| StudyError::Corrupt("no allocation".into()))?;
        let mut inputs = Vec::with_capacity(3);
        let mut tables = Vec::with_capacity(3);
        for (j, class) in PosClass::STRATA.into_iter().enumerate() {
            let mut counts = StratumCounts::default();
            let mut sample_size = 0u64;
            for draw in [&self.state.draws.pilot, &self.state.draws.main].into_iter().flatten() {
                let c = self.stratum_counts(draw, class);
                sample_size += draw.stratum(class).len() as u64;
                counts.judged += c.judged;
                counts.produced += c.produced;
                counts.correct += c.correct;
            }
            inputs.push(StratumInput {
                class,
                population_size: self.corpus.stratum_size(class) as u64,
                sample_size,
                counts,
                sd: plan.strata[j].sd,
            });
            tables.push(frequency_table(&self.corpus, class)?);
        }
        Ok(build_report(&inputs, tables, &self.state.config.report_settings()?)?)
    }

    /// Rebuilds a study by re-applying an audit log to a fresh state.
    pub fn replay(corpus: Arc<Corpus>, corpus_ref: CorpusRef, log: &[AuditEntry]) -> Result<Self> {
        let diverged = |entry: usize, reason: String| StudyError::ReplayDiverged { entry, reason };
        let (first, rest) = log.split_first().ok_or_else(|| diverged(0, "empty audit log".into()))?;
        let Action::Create { config } = &first.action else {
            return Err(diverged(0, "log does not start with create".into()));
        };
        let mut study = Study::create(corpus, corpus_ref, config.clone(), first.at)?;
        for (n, entry) in rest.iter().enumerate() {
            match &entry.action {
                Action::Create { .. } => return Err(diverged(n + 1, "second create".into())),
                Action::Advance { from, to } => {
                    if study.phase() != *from {
                        return Err(diverged(n + 1, format!("expected phase {from}, at {}", study.phase())));
                    }
                    let reached = study.advance(entry.at)?;
                    if reached != *to {
                        return Err(diverged(n + 1, format!("reached {reached}, log says {to}")));
                    }
                }
                Action::Judge {
                    item_index,
                    verdict,
                    judge_id,
                } => study.record_judgment(*item_index, *verdict, judge_id, entry.at)?,
            }
        }
        Ok(study)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(&self.state)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Writes the state next to `path` and renames it into place, so a crash
    /// leaves either the old or the new file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| StudyError::Io {
            path: path.to_path_buf(),
            source,
        };
        let bytes = self.to_json()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut file = fs::File::create(&tmp).map_err(io)?;
            file.write_all(&bytes).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    /// Loads a study file and its corpus. The corpus is read from
    /// `corpus_path` when given, otherwise from the path stored in the study;
    /// a relative stored path is taken relative to the study file.
    pub fn load(path: impl AsRef<Path>, corpus_path: Option<&Path>) -> Result<Self> {
        let path = path.as_ref();
        let state = read_state(path)?;
        let corpus_path = match corpus_path {
            Some(p) => p.to_path_buf(),
            None => path
                .parent()
                .map_or_else(|| state.corpus_path.clone(), |dir| dir.join(&state.corpus_path)),
        };
        let (corpus, corpus_ref) = corpus::load_corpus(&corpus_path)?;
        Study::open(state, Arc::new(corpus), &corpus_ref.digest)
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

/// Parses a study file, rejecting versions this build does not know before
/// interpreting any other field.
pub fn read_state(path: &Path) -> Result<StudyState> {
    let bytes = fs::read(path).map_err(|source| StudyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_state(&bytes)
}

pub fn parse_state(bytes: &[u8]) -> Result<StudyState> {
    let probe: VersionProbe = serde_json::from_slice(bytes)?;
    if probe.version == 0 || probe.version > STUDY_VERSION {
        return Err(StudyError::UnsupportedVersion(probe.version));
    }
    Ok(serde_json::from_slice(bytes)?)
}
